//! Span typing on top of detected mentions.
//!
//! A span is embedded as the concatenation of its first and last token
//! representations and classified by a two-layer perceptron into one of the
//! entity types or the reserved `NONE` class.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::{match_prf, Prf, SpanSets};
use crate::probe::{ProbeKind, RepSource, Reps};
use crate::repio::{Blob, Checkpoint, TypedPredictionRecord, TypedSequence};
use crate::spanspace::Span;
use crate::training::{adamw_step, clip_gradients, AdamWConfig, OptimState, ParamSet};

pub const NONE_LABEL: &str = "NONE";
pub const DEFAULT_HIDDEN: usize = 1024;
const CHECKPOINT_KIND: &str = "ner_head";

/// MLP weights. `labels` lists the entity types followed by `NONE`.
#[derive(Debug, Clone, PartialEq)]
pub struct NerHeadParams {
    pub dim: usize,
    pub hidden: usize,
    pub labels: Vec<String>,
    /// `hidden x 2*dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `labels.len() x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamSet for NerHeadParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn label_list(types: &[String]) -> Result<Vec<String>> {
    let set: BTreeSet<&String> = types.iter().collect();
    if set.is_empty() {
        return Err(Error::Empty("entity type list"));
    }
    if set.iter().any(|t| t.as_str() == NONE_LABEL) {
        return Err(Error::Config(format!("{NONE_LABEL:?} is reserved")));
    }
    let mut labels: Vec<String> = set.into_iter().cloned().collect();
    labels.push(NONE_LABEL.to_owned());
    Ok(labels)
}

impl NerHeadParams {
    /// All-zero weights for the given (deduplicated, sorted) entity types.
    pub fn zeros(dim: usize, hidden: usize, types: &[String]) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::Config("dim and hidden must be positive".into()));
        }
        let labels = label_list(types)?;
        let k = labels.len();
        Ok(NerHeadParams {
            dim,
            hidden,
            w1: vec![0.0; hidden * 2 * dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; k * hidden],
            b2: vec![0.0; k],
            labels,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights and zero biases, rounded to f32.
    pub fn init(dim: usize, hidden: usize, types: &[String], rng: &mut impl Rng) -> Result<Self> {
        let mut p = Self::zeros(dim, hidden, types)?;
        let b = 1.0 / ((2 * dim) as f64).sqrt();
        p.w1.iter_mut().for_each(|x| *x = rng.random_range(-b..b));
        let b = 1.0 / (hidden as f64).sqrt();
        p.w2.iter_mut().for_each(|x| *x = rng.random_range(-b..b));
        p.round_to_f32();
        Ok(p)
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn none_index(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn label_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::UnknownType(label.to_owned()))
    }

    pub fn zeros_like(&self) -> Self {
        NerHeadParams {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
            ..self.clone()
        }
    }

    pub fn round_to_f32(&mut self) {
        for s in self.param_slices_mut() {
            s.iter_mut().for_each(|x| *x = f64::from(*x as f32));
        }
    }

    pub fn to_checkpoint(&self, embed_layer: Option<usize>) -> Result<Checkpoint> {
        let mut manifest = Map::new();
        manifest.insert("kind".into(), json!(CHECKPOINT_KIND));
        manifest.insert("dim".into(), json!(self.dim));
        manifest.insert("hidden".into(), json!(self.hidden));
        manifest.insert("labels".into(), json!(self.labels));
        manifest.insert("embed_layer".into(), json!(embed_layer));
        let k = self.num_labels();
        let blob = |name: &str, shape: Vec<usize>, data: &[f64]| {
            Blob::new(name, shape, data.iter().map(|&x| x as f32).collect())
        };
        Ok(Checkpoint {
            manifest,
            blobs: vec![
                blob("w1", vec![self.hidden, 2 * self.dim], &self.w1)?,
                blob("b1", vec![self.hidden], &self.b1)?,
                blob("w2", vec![k, self.hidden], &self.w2)?,
                blob("b2", vec![k], &self.b2)?,
            ],
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        if m.get("kind").and_then(Value::as_str) != Some(CHECKPOINT_KIND) {
            return Err(Error::Manifest(format!(
                "expected kind {CHECKPOINT_KIND:?}, got {:?}",
                m.get("kind")
            )));
        }
        let field = |key: &str| {
            m.get(key)
                .and_then(Value::as_u64)
                .map(|x| x as usize)
                .ok_or_else(|| Error::Manifest(format!("missing or invalid {key:?}")))
        };
        let labels: Vec<String> = serde_json::from_value(
            m.get("labels")
                .cloned()
                .ok_or_else(|| Error::Manifest("missing \"labels\"".into()))?,
        )?;
        if labels.last().map(String::as_str) != Some(NONE_LABEL) {
            return Err(Error::Manifest(format!(
                "labels must end with {NONE_LABEL:?}"
            )));
        }
        let mut p = Self::zeros(field("dim")?, field("hidden")?, &labels[..labels.len() - 1])?;
        if p.labels != labels {
            return Err(Error::Manifest("labels must be sorted and unique".into()));
        }
        let k = p.num_labels();
        let expect = [
            ("w1", vec![p.hidden, 2 * p.dim]),
            ("b1", vec![p.hidden]),
            ("w2", vec![k, p.hidden]),
            ("b2", vec![k]),
        ];
        for ((name, shape), dst) in expect.iter().zip(p.param_slices_mut()) {
            let blob = ckpt.blob(name)?;
            if blob.spec.shape != *shape {
                return Err(Error::Manifest(format!(
                    "blob {name:?} has shape {:?}, expected {shape:?}",
                    blob.spec.shape
                )));
            }
            for (d, &s) in dst.iter_mut().zip(&blob.data) {
                *d = f64::from(s);
            }
        }
        Ok(p)
    }
}

/// First and last token representations of `span`, concatenated.
pub fn span_embedding(reps: &Reps, span: Span) -> Result<Vec<f64>> {
    if !span.fits(reps.rows) {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            n_tokens: reps.rows,
        });
    }
    let mut out = Vec::with_capacity(2 * reps.cols);
    out.extend_from_slice(reps.row(span.start - 1));
    out.extend_from_slice(reps.row(span.end - 1));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub probs: Vec<f64>,
    pub index: usize,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn forward(x: &[f64], p: &NerHeadParams) -> Activations {
    let in_dim = 2 * p.dim;
    let pre: Vec<f64> = (0..p.hidden)
        .map(|r| {
            let row = &p.w1[r * in_dim..(r + 1) * in_dim];
            p.b1[r] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect();
    let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
    let logits: Vec<f64> = (0..p.num_labels())
        .map(|c| {
            let row = &p.w2[c * p.hidden..(c + 1) * p.hidden];
            p.b2[c] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
        })
        .collect();
    Activations {
        pre,
        hidden,
        probs: softmax(&logits),
    }
}

/// Label distribution `softmax(W2 relu(W1 x + b1) + b2)` and its argmax
/// (first index on ties).
pub fn classify_span(x: &[f64], params: &NerHeadParams) -> Result<Classification> {
    if x.len() != 2 * params.dim {
        return Err(Error::Dimension(format!(
            "embedding has {} values, head expects {}",
            x.len(),
            2 * params.dim
        )));
    }
    let probs = forward(x, params).probs;
    let index = probs
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > probs[best] { i } else { best });
    Ok(Classification { probs, index })
}

/// One training example: a span embedding and its label index.
#[derive(Debug, Clone, PartialEq)]
pub struct NerExample {
    pub embedding: Vec<f64>,
    pub label: usize,
}

/// Mean cross-entropy over `batch` and its gradients.
pub fn ner_loss_gradients(batch: &[NerExample], p: &NerHeadParams) -> Result<(f64, NerHeadParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let k = p.num_labels();
    for ex in batch {
        if ex.embedding.len() != 2 * p.dim {
            return Err(Error::Dimension("embedding width mismatch".into()));
        }
        if ex.label >= k {
            return Err(Error::UnknownType(format!("label index {}", ex.label)));
        }
    }
    let scale = 1.0 / batch.len() as f64;
    let acts: Vec<Activations> = batch
        .par_iter()
        .map(|ex| forward(&ex.embedding, p))
        .collect();
    let loss = acts
        .iter()
        .zip(batch)
        .map(|(a, ex)| -a.probs[ex.label].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        * scale;

    // dz = (p - onehot) / B; da = (W2^T dz) * relu'(a)
    let dz: Vec<Vec<f64>> = acts
        .iter()
        .zip(batch)
        .map(|(a, ex)| {
            let mut d: Vec<f64> = a.probs.iter().map(|v| v * scale).collect();
            d[ex.label] -= scale;
            d
        })
        .collect();
    let da: Vec<Vec<f64>> = acts
        .par_iter()
        .zip(dz.par_iter())
        .map(|(a, d)| {
            (0..p.hidden)
                .map(|r| {
                    if a.pre[r] <= 0.0 {
                        return 0.0;
                    }
                    (0..k).map(|c| p.w2[c * p.hidden + r] * d[c]).sum()
                })
                .collect()
        })
        .collect();

    let mut g = p.zeros_like();
    let in_dim = 2 * p.dim;
    // Row-parallel accumulation: each row sums examples in batch order.
    g.w1.par_chunks_mut(in_dim)
        .zip(g.b1.par_iter_mut())
        .enumerate()
        .for_each(|(r, (row, b))| {
            for (ex, d) in batch.iter().zip(&da) {
                let dr = d[r];
                if dr == 0.0 {
                    continue;
                }
                *b += dr;
                for (w, x) in row.iter_mut().zip(&ex.embedding) {
                    *w += dr * x;
                }
            }
        });
    g.w2.par_chunks_mut(p.hidden)
        .zip(g.b2.par_iter_mut())
        .enumerate()
        .for_each(|(c, (row, b))| {
            for (a, d) in acts.iter().zip(&dz) {
                *b += d[c];
                for (w, h) in row.iter_mut().zip(&a.hidden) {
                    *w += d[c] * h;
                }
            }
        });
    Ok((loss, g))
}

/// Where training spans come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionSource {
    /// Gold spans only.
    Gold,
    /// Detector predictions plus gold spans; predictions without a gold type
    /// are labelled `NONE`.
    Predictions,
}

impl FromStr for MentionSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gold" => Ok(MentionSource::Gold),
            "predictions" => Ok(MentionSource::Predictions),
            other => Err(format!("unknown mention source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerTrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub mention_source: MentionSource,
    pub embed_layer: Option<usize>,
}

impl Default for NerTrainConfig {
    fn default() -> Self {
        NerTrainConfig {
            hidden: DEFAULT_HIDDEN,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.01,
            grad_clip: 2.0,
            seed: 0,
            mention_source: MentionSource::Predictions,
            embed_layer: None,
        }
    }
}

/// Builds examples for every labelled span of `dataset`. `predicted` is
/// consulted only for [`MentionSource::Predictions`].
pub fn build_examples(
    dataset: &[TypedSequence],
    source: &dyn RepSource,
    predicted: Option<&SpanSets>,
    mention_source: MentionSource,
    params: &NerHeadParams,
) -> Result<Vec<NerExample>> {
    let per_seq: Vec<Vec<NerExample>> = dataset
        .par_iter()
        .map(|seq| {
            let reps = Reps::from_tensor(&source.load(&seq.untyped(), ProbeKind::Tom)?.reps)?;
            let mut labelled: BTreeMap<Span, usize> = BTreeMap::new();
            for (span, ty) in &seq.mentions {
                labelled.insert(*span, params.label_index(ty)?);
            }
            if mention_source == MentionSource::Predictions {
                let preds = predicted
                    .ok_or_else(|| Error::Config("prediction source needs predictions".into()))?;
                for span in preds.get(&seq.seq_id).into_iter().flatten() {
                    labelled.entry(*span).or_insert(params.none_index());
                }
            }
            labelled
                .into_iter()
                .map(|(span, label)| {
                    Ok(NerExample {
                        embedding: span_embedding(&reps, span)?,
                        label,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

/// Types occurring in `dataset`, sorted.
pub fn collect_types(dataset: &[TypedSequence]) -> Vec<String> {
    let set: BTreeSet<&String> = dataset.iter().flat_map(|s| s.mentions.values()).collect();
    set.into_iter().cloned().collect()
}

/// Trains a head on precomputed examples.
pub fn train_on_examples(
    examples: &[NerExample],
    mut params: NerHeadParams,
    config: &NerTrainConfig,
) -> Result<NerHeadParams> {
    if examples.is_empty() {
        return Err(Error::Empty("typing examples"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut state = OptimState::new(
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        &params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<NerExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let (loss, mut grads) = ner_loss_gradients(&batch, &params)?;
            if config.grad_clip > 0.0 {
                clip_gradients(&mut grads, config.grad_clip);
            }
            adamw_step(&mut params, &grads, &mut state);
            params.round_to_f32();
            total += loss * batch.len() as f64;
        }
        info!(
            "typing head epoch {epoch}: mean loss {:.5}",
            total / examples.len() as f64
        );
    }
    Ok(params)
}

/// Trains a typing head from a typed dataset whose representations are read
/// from `source` (the embedding layer).
pub fn train_ner_head(
    dataset: &[TypedSequence],
    source: &dyn RepSource,
    predicted: Option<&SpanSets>,
    config: &NerTrainConfig,
) -> Result<NerHeadParams> {
    let first = dataset.first().ok_or(Error::Empty("typed dataset"))?;
    let dim = Reps::from_tensor(&source.load(&first.untyped(), ProbeKind::Tom)?.reps)?.cols;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = NerHeadParams::init(dim, config.hidden, &collect_types(dataset), &mut rng)?;
    let examples = build_examples(dataset, source, predicted, config.mention_source, &params)?;
    train_on_examples(&examples, params, config)
}

/// Types each span of `spans`, dropping those classified `NONE`.
pub fn predict_types(
    reps: &Reps,
    spans: &BTreeSet<Span>,
    params: &NerHeadParams,
) -> Result<Vec<(Span, String)>> {
    let mut out = Vec::new();
    for &span in spans {
        let c = classify_span(&span_embedding(reps, span)?, params)?;
        if c.index != params.none_index() {
            out.push((span, params.labels[c.index].clone()));
        }
    }
    Ok(out)
}

fn typed_sets<'a>(
    items: impl Iterator<Item = (&'a str, Vec<(Span, String)>)>,
) -> SpanSets<(Span, String)> {
    let mut out: SpanSets<(Span, String)> = BTreeMap::new();
    for (id, spans) in items {
        out.entry(id.to_owned())
            .or_default()
            .extend(spans.into_iter().filter(|(_, t)| t != NONE_LABEL));
    }
    out
}

/// Micro P/R/F1 over exact (span, type) matches; `NONE` predictions are
/// ignored.
pub fn ner_f1(pred: &[TypedPredictionRecord], gold: &[TypedSequence]) -> Result<Prf> {
    let pred = typed_sets(pred.iter().map(|r| {
        (
            r.seq_id.as_str(),
            r.spans
                .iter()
                .map(|(s, e, t)| (Span::new(*s, *e), t.clone()))
                .collect(),
        )
    }));
    let gold = typed_sets(gold.iter().map(|g| {
        (
            g.seq_id.as_str(),
            g.mentions.iter().map(|(s, t)| (*s, t.clone())).collect(),
        )
    }));
    match_prf(&pred, &gold)
}
