use rayon::prelude::*;

use super::loss::{bbce_logit_gradients, bbce_terms, BbceTerms};
use crate::error::{Error, Result};
use crate::probe::{ProbeForward, ProbeInputs, ProbeParams};

/// One sequence of a training batch: its inputs and canonical-order span labels.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub inputs: &'a ProbeInputs,
    pub labels: &'a [u8],
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub loss: f64,
    pub terms: BbceTerms,
    pub grads: ProbeParams,
}

fn forward_all(
    batch: &[BatchItem<'_>],
    params: &ProbeParams,
    window: usize,
) -> Result<Vec<ProbeForward>> {
    let forwards: Vec<ProbeForward> = batch
        .par_iter()
        .map(|item| ProbeForward::run(item.inputs, params, window))
        .collect::<Result<_>>()?;
    for (f, item) in forwards.iter().zip(batch) {
        if f.spans.len() != item.labels.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} spans",
                item.labels.len(),
                f.spans.len()
            )));
        }
    }
    Ok(forwards)
}

fn concat(forwards: &[ProbeForward], batch: &[BatchItem<'_>]) -> (Vec<f64>, Vec<u8>) {
    let probs = forwards
        .iter()
        .flat_map(|f| f.probs.iter().copied())
        .collect();
    let labels = batch
        .iter()
        .flat_map(|b| b.labels.iter().copied())
        .collect();
    (probs, labels)
}

/// Balanced BCE over all spans of the batch, with one `alpha` for the batch.
pub fn batch_loss(batch: &[BatchItem<'_>], params: &ProbeParams, window: usize) -> Result<f64> {
    let forwards = forward_all(batch, params, window)?;
    let (probs, labels) = concat(&forwards, batch);
    Ok(bbce_terms(&probs, &labels)?.loss())
}

/// Loss and exact gradients with respect to every probe parameter.
///
/// Sequences are processed in parallel; per-sequence gradients are summed in
/// batch order so the result does not depend on scheduling.
pub fn loss_gradients(
    batch: &[BatchItem<'_>],
    params: &ProbeParams,
    window: usize,
) -> Result<BatchGradients> {
    let forwards = forward_all(batch, params, window)?;
    let (probs, labels) = concat(&forwards, batch);
    let terms = bbce_terms(&probs, &labels)?;
    let total = terms.total();

    let partials: Vec<ProbeParams> = forwards
        .par_iter()
        .zip(batch.par_iter())
        .map(|(f, item)| {
            let dlogit = bbce_logit_gradients(&f.probs, item.labels, terms.alpha, total);
            let mut g = params.zeros_like();
            f.backward(item.inputs, params, &dlogit, &mut g);
            g
        })
        .collect();
    let mut grads = params.zeros_like();
    for g in &partials {
        grads.add_assign(g);
    }
    Ok(BatchGradients {
        loss: terms.loss(),
        terms,
        grads,
    })
}
