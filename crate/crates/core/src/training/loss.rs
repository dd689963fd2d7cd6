//! Balanced binary cross-entropy.
//!
//! `loss = -(1/T) * sum_s [alpha * y_s * log p_s + (1 - y_s) * log(1 - p_s)]`
//! with `alpha = Neg / Pos` computed per batch and `T` the number of spans.

use crate::error::{Error, Result};
use crate::spanspace::class_counts;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the logs.
pub const PROB_EPS: f64 = 1e-7;

/// Per-batch class weight; 1 when the batch has no positives.
pub fn bbce_alpha(pos: usize, neg: usize) -> f64 {
    if pos == 0 {
        1.0
    } else {
        neg as f64 / pos as f64
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Class-wise loss totals before the `1/T` normalisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbceTerms {
    pub pos: usize,
    pub neg: usize,
    pub alpha: f64,
    /// `alpha * sum_{y=1} -log p`
    pub positive_mass: f64,
    /// `sum_{y=0} -log(1 - p)`
    pub negative_mass: f64,
}

impl BbceTerms {
    pub fn total(&self) -> usize {
        self.pos + self.neg
    }

    pub fn loss(&self) -> f64 {
        (self.positive_mass + self.negative_mass) / self.total() as f64
    }
}

/// Running mean; exact when every input is identical.
fn running_mean(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut mean = 0.0;
    let mut count = 0;
    for x in values {
        count += 1;
        mean += (x - mean) / count as f64;
    }
    (mean, count)
}

pub fn bbce_terms(probs: &[f64], labels: &[u8]) -> Result<BbceTerms> {
    if probs.is_empty() {
        return Err(Error::Empty("loss batch"));
    }
    if probs.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} probabilities vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let (pos, neg) = class_counts(labels);
    let alpha = bbce_alpha(pos, neg);
    let pairs = || probs.iter().zip(labels);
    let (pos_mean, _) = running_mean(
        pairs()
            .filter(|(_, &y)| y != 0)
            .map(|(&p, _)| -clamp_prob(p).ln()),
    );
    let (neg_mean, _) = running_mean(
        pairs()
            .filter(|(_, &y)| y == 0)
            .map(|(&p, _)| -(1.0 - clamp_prob(p)).ln()),
    );
    // alpha * Pos == Neg whenever there are positives.
    let positive_weight = if pos == 0 { 0.0 } else { neg as f64 };
    Ok(BbceTerms {
        pos,
        neg,
        alpha,
        positive_mass: positive_weight * pos_mean,
        negative_mass: neg as f64 * neg_mean,
    })
}

pub fn bbce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    bbce_terms(probs, labels).map(|t| t.loss())
}

/// `d loss / d logit` for each span, given `p = sigmoid(logit)`.
///
/// Spans whose probability sits on the clamp boundary get zero gradient.
pub fn bbce_logit_gradients(probs: &[f64], labels: &[u8], alpha: f64, total: usize) -> Vec<f64> {
    let inv_t = 1.0 / total as f64;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
                0.0
            } else if y != 0 {
                -alpha * inv_t * (1.0 - p)
            } else {
                inv_t * p
            }
        })
        .collect()
}
