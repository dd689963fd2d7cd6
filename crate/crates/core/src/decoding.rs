//! Turning span probabilities into mention sets.

use std::cmp::Ordering;

use crate::probe::SpanProbMatrix;
use crate::repio::{DecodeMode, ScoredSpan};

pub const DEFAULT_TAU: f64 = 0.5;

/// Every span with probability at least `tau`; nesting and overlap allowed.
/// Output is in canonical span order.
pub fn threshold_decode(probs: &SpanProbMatrix, tau: f64) -> Vec<ScoredSpan> {
    debug_assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
    probs
        .iter()
        .filter(|&(_, p)| p >= tau)
        .map(|(span, prob)| ScoredSpan { span, prob })
        .collect()
}

/// Candidate priority: probability descending, then earlier start, then shorter.
pub fn greedy_order(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    b.prob
        .total_cmp(&a.prob)
        .then_with(|| a.span.start.cmp(&b.span.start))
        .then_with(|| a.span.len().cmp(&b.span.len()))
}

/// Repeatedly accepts the best remaining candidate (p >= `tau`) that shares no
/// token with an accepted span. Output is in canonical span order.
pub fn greedy_flat_decode(probs: &SpanProbMatrix, tau: f64) -> Vec<ScoredSpan> {
    let mut candidates = threshold_decode(probs, tau);
    candidates.sort_by(greedy_order);
    let mut taken = vec![false; probs.n + 1];
    let mut accepted = Vec::new();
    for c in candidates {
        let tokens = c.span.start..=c.span.end;
        if tokens.clone().any(|t| taken[t]) {
            continue;
        }
        for t in tokens {
            taken[t] = true;
        }
        accepted.push(c);
    }
    accepted.sort_by_key(|s| s.span);
    accepted
}

pub fn decode(probs: &SpanProbMatrix, tau: f64, mode: DecodeMode) -> Vec<ScoredSpan> {
    match mode {
        DecodeMode::Threshold => threshold_decode(probs, tau),
        DecodeMode::Greedy => greedy_flat_decode(probs, tau),
    }
}
