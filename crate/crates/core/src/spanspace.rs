//! Candidate span enumeration under a sliding window, and gold alignment.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Default maximum span length in tokens.
pub const DEFAULT_WINDOW: usize = 25;

/// A contiguous token span, 1-based and inclusive on both ends.
///
/// Spans order canonically by end token, then start token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end, "span start {start} > end {end}");
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True if the two spans share at least one token.
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn fits(&self, n_tokens: usize) -> bool {
        self.start >= 1 && self.start <= self.end && self.end <= n_tokens
    }
}

impl Ord for Span {
    fn cmp(&self, other: &Self) -> Ordering {
        self.end
            .cmp(&other.end)
            .then_with(|| self.start.cmp(&other.start))
    }
}

impl PartialOrd for Span {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&format!("({}, {})", self.start, self.end))
    }
}

/// Number of spans `enumerate_spans(n, window)` yields.
pub fn span_count(n: usize, window: usize) -> usize {
    if n <= window {
        n * (n + 1) / 2
    } else {
        window * n - window * (window - 1) / 2
    }
}

/// All spans of length at most `window` over `n` tokens, in canonical order.
pub fn enumerate_spans(n: usize, window: usize) -> Vec<Span> {
    assert!(window >= 1, "window must be at least 1");
    let mut spans = Vec::with_capacity(span_count(n, window));
    for end in 1..=n {
        let first = if end > window { end - window + 1 } else { 1 };
        spans.extend((first..=end).map(|start| Span { start, end }));
    }
    spans
}

/// Position of `span` in the canonical enumeration for `(n, window)`, if it is enumerated.
pub fn canonical_index(span: Span, n: usize, window: usize) -> Option<usize> {
    if !span.fits(n) || span.len() > window {
        return None;
    }
    // spans ending before `span.end`
    let before = span_count(span.end - 1, window);
    let first = if span.end > window {
        span.end - window + 1
    } else {
        1
    };
    Some(before + (span.start - first))
}

/// Binary labels aligned with a canonical span list.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanLabels {
    pub spans: Vec<Span>,
    pub labels: Vec<u8>,
    /// Gold spans longer than the window; they can never be predicted.
    pub dropped: Vec<Span>,
}

impl SpanLabels {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }
}

/// Label each enumerated span 1 iff it is exactly a gold span.
pub fn label_spans(spans: &[Span], gold: &BTreeSet<Span>, window: usize) -> SpanLabels {
    let labels = spans.iter().map(|s| u8::from(gold.contains(s))).collect();
    let dropped = gold.iter().filter(|s| s.len() > window).copied().collect();
    SpanLabels {
        spans: spans.to_vec(),
        labels,
        dropped,
    }
}

/// Positive and negative counts of a binary label sequence.
pub fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y != 0).count();
    (pos, labels.len() - pos)
}
