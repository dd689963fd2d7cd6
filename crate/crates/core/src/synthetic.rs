//! Planted-mention data with known ground truth.
//!
//! Every token carries a shared offset, its own random content direction and
//! Gaussian noise.
//! Tokens inside a mention also share a direction drawn per mention, the first
//! token of a mention gets a start marker and the last token an end marker.
//! Optional per-head queries/keys and attention scores are linear read-outs of
//! the same representations.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::probe::{MemoryRepSource, ProbeInputs};
use crate::repio::{write_dataset, write_tensor, AnnotatedSequence, TensorF32};
use crate::spanspace::Span;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_seqs: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub max_mention_len: usize,
    /// Probability that a mention starts at a free position.
    pub mention_rate: f64,
    pub noise: f64,
    /// Strength of a direction shared by every token.
    pub offset: f64,
    pub content: f64,
    pub mention_strength: f64,
    pub start_strength: f64,
    pub end_strength: f64,
    /// Attention heads to synthesise; 0 leaves queries, keys and attention out.
    pub heads: usize,
    pub head_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_seqs: 500,
            dim: 32,
            min_len: 8,
            max_len: 24,
            max_mention_len: 4,
            mention_rate: 0.2,
            noise: 0.1,
            offset: 2.0,
            content: 0.3,
            mention_strength: 0.5,
            start_strength: 4.0,
            end_strength: 4.0,
            heads: 0,
            head_dim: 8,
            seed: 0,
        }
    }
}

pub struct SyntheticData {
    pub dataset: Vec<AnnotatedSequence>,
    pub source: MemoryRepSource,
}

fn unit_vector(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Flat, non-overlapping mentions over `n` tokens.
fn place_mentions(rng: &mut impl Rng, n: usize, cfg: &SyntheticConfig) -> BTreeSet<Span> {
    let mut out = BTreeSet::new();
    let mut t = 1;
    while t <= n {
        if rng.random_bool(cfg.mention_rate) {
            let len = rng.random_range(1..=cfg.max_mention_len).min(n - t + 1);
            out.insert(Span::new(t, t + len - 1));
            t += len;
        } else {
            t += 1;
        }
    }
    out
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len && cfg.max_mention_len >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let start_marker = unit_vector(&mut rng, d);
    let end_marker = unit_vector(&mut rng, d);
    let offset = unit_vector(&mut rng, d);
    let head_proj: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.heads)
        .map(|_| {
            let scale = 1.0 / (d as f64).sqrt();
            let mut m = || -> Vec<f64> {
                (0..d * cfg.head_dim)
                    .map(|_| {
                        let x: f64 = StandardNormal.sample(&mut rng);
                        scale * x
                    })
                    .collect()
            };
            (m(), m())
        })
        .collect();
    let noise = Normal::new(0.0, cfg.noise).expect("noise must be finite and non-negative");

    let mut dataset = Vec::with_capacity(cfg.n_seqs);
    let mut source = MemoryRepSource::new();
    for s in 0..cfg.n_seqs {
        let n = rng.random_range(cfg.min_len..=cfg.max_len);
        let mentions = place_mentions(&mut rng, n, cfg);
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut z: Vec<f64> = (0..d).map(|_| noise.sample(&mut rng)).collect();
                let c = unit_vector(&mut rng, d);
                axpy(&mut z, cfg.content, &c);
                axpy(&mut z, cfg.offset, &offset);
                z
            })
            .collect();
        for m in &mentions {
            let u = unit_vector(&mut rng, d);
            for t in m.start..=m.end {
                axpy(&mut rows[t - 1], cfg.mention_strength, &u);
            }
            axpy(&mut rows[m.start - 1], cfg.start_strength, &start_marker);
            axpy(&mut rows[m.end - 1], cfg.end_strength, &end_marker);
        }

        let seq_id = format!("syn-{s:05}");
        let mut inputs = ProbeInputs::from_reps(TensorF32::from_rows(&rows)?);
        if cfg.heads > 0 {
            let dh = cfg.head_dim;
            let project = |p: &[f64]| -> Vec<f64> {
                rows.iter()
                    .flat_map(|z| {
                        (0..dh).map(move |c| (0..d).map(|r| z[r] * p[r * dh + c]).sum::<f64>())
                    })
                    .collect()
            };
            let mut q = Vec::with_capacity(cfg.heads * n * dh);
            let mut k = Vec::with_capacity(cfg.heads * n * dh);
            let mut attn = Vec::with_capacity(cfg.heads * n * n);
            for (pq, pk) in &head_proj {
                let qh = project(pq);
                let kh = project(pk);
                for i in 0..n {
                    for j in 0..n {
                        let dot: f64 = (0..dh).map(|c| qh[i * dh + c] * kh[j * dh + c]).sum();
                        attn.push(dot / (dh as f64).sqrt());
                    }
                }
                q.extend(qh);
                k.extend(kh);
            }
            let to32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
            inputs.queries = Some(TensorF32::new(vec![cfg.heads, n, dh], to32(q))?);
            inputs.keys = Some(TensorF32::new(vec![cfg.heads, n, dh], to32(k))?);
            inputs.attention = Some(TensorF32::new(vec![1, cfg.heads, n, n], to32(attn))?);
        }
        source.insert(seq_id.clone(), inputs);
        dataset.push(AnnotatedSequence {
            rep_file: format!("{seq_id}.tomr"),
            seq_id,
            n_tokens: n,
            mentions,
            token_texts: None,
        });
    }
    Ok(SyntheticData { dataset, source })
}

/// Writes `dataset.jsonl` and every sequence's tensors under `dir`, with
/// queries, keys and attention as `.q`, `.k` and `.attn` companions. Token
/// texts `w1 .. wn` are filled in when missing.
pub fn export(data: &SyntheticData, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut dataset = data.dataset.clone();
    for seq in &mut dataset {
        let inputs = data
            .source
            .get(&seq.seq_id)
            .ok_or_else(|| Error::KeyMismatch(format!("no inputs for {:?}", seq.seq_id)))?;
        let stem = seq.rep_file.trim_end_matches(".tomr");
        write_tensor(&inputs.reps, dir.join(&seq.rep_file))?;
        let companions = [
            ("q", &inputs.queries),
            ("k", &inputs.keys),
            ("attn", &inputs.attention),
        ];
        for (suffix, t) in companions {
            if let Some(t) = t {
                write_tensor(t, dir.join(format!("{stem}.{suffix}.tomr")))?;
            }
        }
        seq.token_texts
            .get_or_insert_with(|| (1..=seq.n_tokens).map(|i| format!("w{i}")).collect());
    }
    let path = dir.join("dataset.jsonl");
    write_dataset(&dataset, &path)?;
    Ok(path)
}

/// Removes a seeded `fraction` of all gold mentions, pooled over the dataset.
pub fn drop_labels(
    dataset: &[AnnotatedSequence],
    fraction: f64,
    seed: u64,
) -> Vec<AnnotatedSequence> {
    let mut all: Vec<(usize, Span)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.mentions.iter().map(move |&m| (i, m)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    let k = (all.len() as f64 * fraction).round() as usize;
    let mut out = dataset.to_vec();
    for (i, m) in &all[..k.min(all.len())] {
        out[*i].mentions.remove(m);
    }
    out
}
