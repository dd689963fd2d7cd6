//! Value probe, the five span features and the logistic combiner.

use super::inputs::{ProbeInputs, Reps};
use super::matching::{
    lcattn_backward, lcattn_forward, ltqk_backward, ltqk_forward, sigmoid, tom_backward,
    tom_forward, LcattnCache, LtqkCache, MatchMatrix, TomCache,
};
use super::params::{Matcher, ProbeParams};
use crate::error::{Error, Result};
use crate::repio::TensorF32;
use crate::spanspace::{enumerate_spans, Span};

/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

/// `v_i = W_V . z_i` for every token, plus the boundary value `v_{n+1} = 0`.
pub fn value_probe(reps: &TensorF32, w_v: &[f64]) -> Result<Vec<f64>> {
    value_probe_rows(&Reps::from_tensor(reps)?, w_v)
}

pub(crate) fn value_probe_rows(reps: &Reps, w_v: &[f64]) -> Result<Vec<f64>> {
    if reps.cols != w_v.len() {
        return Err(Error::Dimension(format!(
            "value probe has width {}, reps have {}",
            w_v.len(),
            reps.cols
        )));
    }
    let mut v: Vec<f64> = (0..reps.rows)
        .map(|i| {
            let mut s = 0.0;
            for (a, b) in reps.row(i).iter().zip(w_v) {
                s += a * b;
            }
            s
        })
        .collect();
    v.push(0.0);
    Ok(v)
}

/// `(m_ij, max_{i<k<=j} m_kj, min_{i<k<=j} m_kj, v_j, v_{j+1})`.
///
/// For single-token spans the pool is empty and both pooled features are `m_ii`.
/// `values` holds `n + 1` entries (see [`value_probe`]).
pub fn assemble_features(m: &MatchMatrix, values: &[f64], span: Span) -> Result<[f64; 5]> {
    let (i, j) = (span.start, span.end);
    let m_ij = m
        .get(i, j)
        .ok_or_else(|| Error::Dimension(format!("span {span} outside the window")))?;
    let (mut hi, mut lo) = (m_ij, m_ij);
    if i < j {
        hi = f64::NEG_INFINITY;
        lo = f64::INFINITY;
        for k in i + 1..=j {
            let x = m.get(k, j).expect("inner start lies inside the window");
            hi = hi.max(x);
            lo = lo.min(x);
        }
    }
    Ok([m_ij, hi, lo, values[j - 1], values[j]])
}

/// Raw logit `theta . features`, summed left to right.
pub fn span_logit(features: &[f64; 5], theta: &[f64; 5]) -> f64 {
    let mut s = 0.0;
    for (f, t) in features.iter().zip(theta) {
        s += f * t;
    }
    s
}

/// `sigmoid(theta . features)` with the logit clamped to `±LOGIT_CLAMP`.
pub fn span_probability(features: &[f64; 5], theta: &[f64; 5]) -> f64 {
    sigmoid(span_logit(features, theta).clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
}

/// Probabilities for every windowed span of a sequence, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanProbMatrix {
    pub n: usize,
    pub window: usize,
    pub spans: Vec<Span>,
    pub probs: Vec<f64>,
}

impl SpanProbMatrix {
    pub fn iter(&self) -> impl Iterator<Item = (Span, f64)> + '_ {
        self.spans.iter().copied().zip(self.probs.iter().copied())
    }
}

/// Features for all spans plus the token indices the pooled features came from.
struct PooledFeatures {
    features: Vec<[f64; 5]>,
    /// 1-based start rows of the max and min pooled scores.
    argmax: Vec<usize>,
    argmin: Vec<usize>,
}

/// Streams pooled features per end token; same values as [`assemble_features`].
fn pooled_features(m: &MatchMatrix, values: &[f64]) -> PooledFeatures {
    let count = m.values().len();
    let mut out = PooledFeatures {
        features: vec![[0.0; 5]; count],
        argmax: vec![0; count],
        argmin: vec![0; count],
    };
    let mv = m.values();
    for j in 1..=m.n() {
        let (base, first) = m.column_start(j);
        let at = |i: usize| base + (i - first);
        let m_jj = mv[at(j)];
        let (mut hi, mut lo) = (m_jj, m_jj);
        let (mut hi_k, mut lo_k) = (j, j);
        for i in (first..=j).rev() {
            if i < j {
                // pool now covers k in (i, j]; m_{i+1,j} joins it
                let x = mv[at(i + 1)];
                if i + 1 == j || x > hi {
                    hi = x;
                    hi_k = i + 1;
                }
                if i + 1 == j || x < lo {
                    lo = x;
                    lo_k = i + 1;
                }
            }
            let idx = at(i);
            out.features[idx] = [mv[idx], hi, lo, values[j - 1], values[j]];
            out.argmax[idx] = hi_k;
            out.argmin[idx] = lo_k;
        }
    }
    out
}

enum MatcherCache {
    Tom(Reps, TomCache),
    Ltqk(LtqkCache),
    Lcattn(LcattnCache),
}

/// Full forward pass over one sequence, retaining what the backward pass needs.
pub struct ProbeForward {
    reps: Reps,
    cache: MatcherCache,
    pub matches: MatchMatrix,
    pub values: Vec<f64>,
    pub spans: Vec<Span>,
    pub features: Vec<[f64; 5]>,
    argmax: Vec<usize>,
    argmin: Vec<usize>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ProbeForward {
    pub fn run(inputs: &ProbeInputs, params: &ProbeParams, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        inputs.check(&params.shape())?;
        let reps = Reps::from_tensor(&inputs.reps)?;
        let (matches, cache) = match &params.matcher {
            Matcher::Tom(p) => {
                let (m, c) = tom_forward(&reps, p, window)?;
                (m, MatcherCache::Tom(reps.clone(), c))
            }
            Matcher::Ltqk(p) => {
                let (q, k) = (inputs.queries.as_ref(), inputs.keys.as_ref());
                let (m, c) = ltqk_forward(q.expect("checked"), k.expect("checked"), p, window)?;
                (m, MatcherCache::Ltqk(c))
            }
            Matcher::Lcattn(p) => {
                let a = inputs.attention.as_ref().expect("checked");
                let (m, c) = lcattn_forward(a, p, window)?;
                (m, MatcherCache::Lcattn(c))
            }
        };
        let values = value_probe_rows(&reps, &params.value)?;
        let pooled = pooled_features(&matches, &values);
        let logits: Vec<f64> = pooled
            .features
            .iter()
            .map(|f| span_logit(f, &params.theta))
            .collect();
        let probs = pooled
            .features
            .iter()
            .map(|f| span_probability(f, &params.theta))
            .collect();
        Ok(ProbeForward {
            spans: enumerate_spans(reps.rows, window),
            reps,
            cache,
            matches,
            values,
            features: pooled.features,
            argmax: pooled.argmax,
            argmin: pooled.argmin,
            logits,
            probs,
        })
    }

    pub fn into_prob_matrix(self) -> SpanProbMatrix {
        SpanProbMatrix {
            n: self.matches.n(),
            window: self.matches.window(),
            spans: self.spans,
            probs: self.probs,
        }
    }

    /// Gradients of `sum_s dlogit[s] * clamp(logit_s)` with respect to all parameters,
    /// accumulated into `grad`.
    pub fn backward(
        &self,
        inputs: &ProbeInputs,
        params: &ProbeParams,
        dlogit: &[f64],
        grad: &mut ProbeParams,
    ) {
        assert_eq!(dlogit.len(), self.spans.len());
        let n = self.reps.rows;
        let window = self.matches.window();
        let mut dm = vec![0.0; self.spans.len()];
        let mut dv = vec![0.0; n + 1];
        for (idx, span) in self.spans.iter().enumerate() {
            let raw = self.logits[idx];
            if raw.abs() > LOGIT_CLAMP {
                continue;
            }
            let g = dlogit[idx];
            if g == 0.0 {
                continue;
            }
            let f = &self.features[idx];
            for (t, x) in grad.theta.iter_mut().zip(f) {
                *t += g * x;
            }
            let j = span.end;
            let (base, first) = self.matches.column_start(j);
            dm[idx] += g * params.theta[0];
            dm[base + self.argmax[idx] - first] += g * params.theta[1];
            dm[base + self.argmin[idx] - first] += g * params.theta[2];
            dv[j - 1] += g * params.theta[3];
            dv[j] += g * params.theta[4];
        }

        // v_{n+1} is a constant; dv[n] is dropped.
        for (i, &d) in dv[..n].iter().enumerate() {
            if d != 0.0 {
                for (gv, z) in grad.value.iter_mut().zip(self.reps.row(i)) {
                    *gv += d * z;
                }
            }
        }

        match (&self.cache, &params.matcher, &mut grad.matcher) {
            (MatcherCache::Tom(reps, cache), Matcher::Tom(p), Matcher::Tom(g)) => {
                tom_backward(reps, p, cache, &self.matches, &dm, g)
            }
            (MatcherCache::Ltqk(cache), Matcher::Ltqk(p), Matcher::Ltqk(g)) => ltqk_backward(
                inputs.queries.as_ref().expect("checked"),
                inputs.keys.as_ref().expect("checked"),
                p,
                cache,
                window,
                &dm,
                g,
            ),
            (MatcherCache::Lcattn(cache), Matcher::Lcattn(p), Matcher::Lcattn(g)) => {
                lcattn_backward(
                    inputs.attention.as_ref().expect("checked"),
                    p,
                    cache,
                    window,
                    &dm,
                    g,
                )
            }
            _ => panic!("gradient accumulator does not match parameter kind"),
        }
    }
}

/// Probabilities of every windowed span in canonical order.
pub fn score_all_spans(
    inputs: &ProbeInputs,
    params: &ProbeParams,
    window: usize,
) -> Result<SpanProbMatrix> {
    ProbeForward::run(inputs, params, window).map(ProbeForward::into_prob_matrix)
}
