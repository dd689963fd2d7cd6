//! The training loop: seeded split and shuffling, BBCE + AdamW with clipping,
//! validation by span F1 and best-checkpoint selection.

use std::collections::BTreeMap;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::gradients::{loss_gradients, BatchItem};
use super::optim::{adamw_step, clip_gradients, AdamWConfig, OptimState};
use crate::decoding::threshold_decode;
use crate::error::{Error, Result};
use crate::evaluation::{match_prf, Prf, SpanSets};
use crate::probe::{ProbeInputs, ProbeKind, ProbeModel, ProbeParams, ProbeShape, RepSource};
use crate::repio::AnnotatedSequence;
use crate::spanspace::{enumerate_spans, label_spans, DEFAULT_WINDOW};

/// Training hyperparameters. Defaults follow the reference configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ProbeKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub window: usize,
    pub rank: usize,
    pub lr: f64,
    /// Global-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fraction of sequences held out for validation.
    pub val_fraction: f64,
    /// Decision threshold used when scoring the validation split.
    pub val_threshold: f64,
    /// Validate every this many steps in addition to every epoch end.
    pub val_interval: Option<usize>,
    /// Steps without validation improvement before the learning rate halves.
    pub patience: usize,
    pub distill_phases: usize,
    pub teacher_threshold: f64,
    pub reset_student: bool,
    pub layer: Option<usize>,
    pub backbone: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ProbeKind::Tom,
            epochs: 8,
            batch_size: 16,
            window: DEFAULT_WINDOW,
            rank: 64,
            lr: 1e-2,
            grad_clip: 2.0,
            weight_decay: 0.01,
            seed: 0,
            val_fraction: 0.02,
            val_threshold: 0.5,
            val_interval: None,
            patience: 5000,
            distill_phases: 1,
            teacher_threshold: 0.90,
            reset_student: true,
            layer: None,
            backbone: String::new(),
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_owned()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.window == 0 {
            return bad("window must be positive");
        }
        if self.rank == 0 {
            return bad("rank must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if !(self.val_threshold > 0.0 && self.val_threshold < 1.0) {
            return bad("val_threshold must lie in (0, 1)");
        }
        if !(self.teacher_threshold > 0.0 && self.teacher_threshold < 1.0) {
            return bad("teacher_threshold must lie in (0, 1)");
        }
        if self.val_interval == Some(0) {
            return bad("val_interval must be positive");
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    fn hyperparameters(&self) -> Map<String, Value> {
        let mut map = match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        };
        map.remove("layer");
        map.remove("backbone");
        map
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub alpha: f64,
    pub pos: usize,
    pub neg: usize,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub step: usize,
    pub epoch: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub validations: Vec<ValidationRecord>,
    pub best_step: Option<usize>,
    pub best_f1: Option<f64>,
    /// Gold spans longer than the window, excluded from training labels.
    pub dropped_gold: usize,
}

/// Indices of the training and validation sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seeded hold-out split; `fraction` of the sequences (at least one when there
/// are two or more and `fraction > 0`) go to validation.
pub fn split_dataset(len: usize, fraction: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let n_val = if len < 2 || fraction <= 0.0 {
        0
    } else {
        ((len as f64 * fraction).round() as usize).clamp(1, len - 1)
    };
    let mut validation = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Split { train, validation }
}

const SPLIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
/// Initialisation of phase `p` draws from stream `INIT_STREAM + p`.
const INIT_STREAM: u64 = 16;

/// The seeded initialisation used by training phase `phase`.
pub fn initial_params(shape: ProbeShape, seed: u64, phase: u64) -> ProbeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM + phase);
    ProbeParams::init(shape, &mut rng)
}

pub struct TrainOutcome {
    pub model: ProbeModel,
    pub log: TrainLog,
    pub split: Split,
}

/// Infers the probe shape from one sequence's inputs.
pub fn infer_shape(inputs: &ProbeInputs, kind: ProbeKind, rank: usize) -> Result<ProbeShape> {
    let dim = match inputs.reps.shape() {
        [_, d] => *d,
        s => return Err(Error::Dimension(format!("reps must be n x d, got {s:?}"))),
    };
    match kind {
        ProbeKind::Tom => Ok(ProbeShape::Tom { dim, rank }),
        ProbeKind::Ltqk => match inputs.queries.as_ref().map(|q| q.shape()) {
            Some(&[heads, _, head_dim]) => Ok(ProbeShape::Ltqk {
                dim,
                rank,
                heads,
                head_dim,
            }),
            _ => Err(Error::Dimension(
                "ltqk needs heads x n x head_dim queries".into(),
            )),
        },
        ProbeKind::Lcattn => match inputs.attention.as_ref().map(|a| a.shape()) {
            Some(&[layers, heads, _, _]) => Ok(ProbeShape::Lcattn { dim, layers, heads }),
            _ => Err(Error::Dimension(
                "lcattn needs layers x heads x n x n attention".into(),
            )),
        },
    }
}

fn gold_sets<'a>(seqs: impl Iterator<Item = &'a AnnotatedSequence>) -> SpanSets {
    seqs.map(|s| (s.seq_id.clone(), s.mentions.clone()))
        .collect()
}

/// Span F1 of `params` on `indices`, decoding by threshold.
fn validate_on(
    params: &ProbeParams,
    gold: &[AnnotatedSequence],
    indices: &[usize],
    source: &dyn RepSource,
    config: &TrainConfig,
) -> Result<Prf> {
    let kind = params.kind();
    let preds: Vec<(String, _)> = indices
        .par_iter()
        .map(|&i| {
            let seq = &gold[i];
            let inputs = source.load(seq, kind)?;
            let probs = crate::probe::score_all_spans(&inputs, params, config.window)?;
            let spans = threshold_decode(&probs, config.val_threshold)
                .into_iter()
                .map(|s| s.span)
                .collect();
            Ok((seq.seq_id.clone(), spans))
        })
        .collect::<Result<_>>()?;
    let pred: SpanSets = preds.into_iter().collect();
    match_prf(&pred, &gold_sets(indices.iter().map(|&i| &gold[i])))
}

/// Trains a probe on `dataset`'s labels.
pub fn train(
    dataset: &[AnnotatedSequence],
    source: &dyn RepSource,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_phase(dataset, dataset, source, config, 0, None)
}

/// One training run. `labels_from` supplies training labels, `gold` the
/// validation references; both index the same sequences. `warm_start`
/// replaces the seeded initialisation.
pub(crate) fn train_phase(
    labels_from: &[AnnotatedSequence],
    gold: &[AnnotatedSequence],
    source: &dyn RepSource,
    config: &TrainConfig,
    phase: u64,
    warm_start: Option<ProbeParams>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if labels_from.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    assert_eq!(labels_from.len(), gold.len());

    let first = source.load(&labels_from[0], config.kind)?;
    let shape = infer_shape(&first, config.kind, config.rank)?;
    let mut params = match warm_start {
        Some(p) => {
            if p.shape() != shape {
                return Err(Error::Dimension(format!(
                    "warm start shape {:?} vs data shape {shape:?}",
                    p.shape()
                )));
            }
            p
        }
        None => initial_params(shape, config.seed, phase),
    };

    let split = split_dataset(labels_from.len(), config.val_fraction, config.seed);
    let mut log = TrainLog::default();
    let labels: BTreeMap<usize, Vec<u8>> = split
        .train
        .iter()
        .map(|&i| {
            let seq = &labels_from[i];
            let spans = enumerate_spans(seq.n_tokens, config.window);
            let l = label_spans(&spans, &seq.mentions, config.window);
            log.dropped_gold += l.dropped.len();
            (i, l.labels)
        })
        .collect();

    let mut state = OptimState::new(config.adamw(), &params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);

    let mut best: Option<(f64, ProbeParams)> = None;
    let mut last_improvement = 0usize;
    let mut step = 0usize;
    let mut order = split.train.clone();

    let mut run_validation = |params: &ProbeParams,
                              step: usize,
                              epoch: usize,
                              state: &mut OptimState,
                              log: &mut TrainLog|
     -> Result<()> {
        if split.validation.is_empty() {
            return Ok(());
        }
        let prf = validate_on(params, gold, &split.validation, source, config)?;
        info!(
            "phase {phase} epoch {epoch} step {step}: val P={:.4} R={:.4} F1={:.4}",
            prf.precision, prf.recall, prf.f1
        );
        log.validations.push(ValidationRecord {
            step,
            epoch,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
        if best.as_ref().is_none_or(|(f1, _)| prf.f1 > *f1) {
            best = Some((prf.f1, params.clone()));
            log.best_step = Some(step);
            log.best_f1 = Some(prf.f1);
            last_improvement = step;
        } else if step - last_improvement >= config.patience {
            let lr = state.config.lr * 0.5;
            info!(
                "no improvement for {} steps; lr -> {lr}",
                step - last_improvement
            );
            state.set_lr(lr);
            last_improvement = step;
        }
        Ok(())
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let inputs: Vec<ProbeInputs> = chunk
                .par_iter()
                .map(|&i| source.load(&labels_from[i], config.kind))
                .collect::<Result<_>>()?;
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .zip(&inputs)
                .map(|(i, inp)| BatchItem {
                    inputs: inp,
                    labels: &labels[i],
                })
                .collect();
            let mut out = loss_gradients(&batch, &params, config.window)?;
            let grad_norm = if config.grad_clip > 0.0 {
                clip_gradients(&mut out.grads, config.grad_clip)
            } else {
                super::optim::global_norm(&out.grads)
            };
            adamw_step(&mut params, &out.grads, &mut state);
            params.round_to_f32();
            log.steps.push(StepRecord {
                step,
                epoch,
                loss: out.loss,
                alpha: out.terms.alpha,
                pos: out.terms.pos,
                neg: out.terms.neg,
                lr: state.config.lr,
                grad_norm,
            });
            if let Some(k) = config.val_interval {
                if step.is_multiple_of(k) {
                    run_validation(&params, step, epoch, &mut state, &mut log)?;
                }
            }
        }
        if config.val_interval.is_none_or(|k| !step.is_multiple_of(k)) {
            run_validation(&params, step, epoch, &mut state, &mut log)?;
        }
    }

    let final_params = match best {
        Some((_, p)) => p,
        None => params,
    };
    let mut model = ProbeModel::new(final_params, config.window);
    model.layer = config.layer;
    model.backbone = config.backbone.clone();
    model.hyperparameters = config.hyperparameters();
    Ok(TrainOutcome { model, log, split })
}
