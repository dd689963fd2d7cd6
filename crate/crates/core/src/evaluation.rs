//! Mention-detection metrics, cross-run agreement and annotator agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanspace::Span;

/// Precision, recall and F1 with the underlying counts.
///
/// Ratios with a zero denominator are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Prf {
            precision,
            recall,
            f1: harmonic(precision, recall),
            tp,
            fp,
            fn_,
        }
    }
}

/// Per-sequence span sets keyed by sequence id.
pub type SpanSets<T = Span> = BTreeMap<String, BTreeSet<T>>;

/// Exact-match counts micro-aggregated over sequences. Both maps must have the
/// same keys.
pub fn match_prf<T: Ord>(pred: &SpanSets<T>, gold: &SpanSets<T>) -> Result<Prf> {
    if pred.len() != gold.len() || pred.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        let missing: Vec<_> = gold
            .keys()
            .filter(|k| !pred.contains_key(*k))
            .chain(pred.keys().filter(|k| !gold.contains_key(*k)))
            .take(5)
            .collect();
        return Err(Error::KeyMismatch(format!(
            "prediction and gold sequence ids differ (e.g. {missing:?})"
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (key, p) in pred {
        let g = &gold[key];
        let hit = p.intersection(g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(Prf::from_counts(tp, fp, fn_))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregateMode {
    /// Sum tp/fp/fn across datasets, then compute ratios.
    Aggregated,
    /// Unweighted mean of per-dataset precision, recall and F1.
    Averaged,
}

impl std::str::FromStr for AggregateMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aggregated" => Ok(AggregateMode::Aggregated),
            "averaged" => Ok(AggregateMode::Averaged),
            other => Err(format!("unknown aggregate mode {other:?}")),
        }
    }
}

/// Combines per-dataset scores. Counts are always summed; in averaged mode
/// the ratios are plain means, so `f1` need not equal `2PR/(P+R)`.
pub fn aggregate(reports: &[Prf], mode: AggregateMode) -> Result<Prf> {
    if reports.is_empty() {
        return Err(Error::Empty("no reports to aggregate"));
    }
    let tp = reports.iter().map(|r| r.tp).sum();
    let fp = reports.iter().map(|r| r.fp).sum();
    let fn_ = reports.iter().map(|r| r.fn_).sum();
    match mode {
        AggregateMode::Aggregated => Ok(Prf::from_counts(tp, fp, fn_)),
        AggregateMode::Averaged => {
            let k = reports.len() as f64;
            let mean = |f: fn(&Prf) -> f64| reports.iter().map(f).sum::<f64>() / k;
            Ok(Prf {
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f1: mean(|r| r.f1),
                tp,
                fp,
                fn_,
            })
        }
    }
}

/// Sørensen–Dice coefficient `2|A ∩ B| / (|A| + |B|)`; two empty sets score 1.
pub fn dice<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let total = a.len() + b.len();
    if total == 0 {
        return 1.0;
    }
    2.0 * a.intersection(b).count() as f64 / total as f64
}

/// Pairwise Dice agreement between prediction runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DiceMatrix {
    /// CSV with a header row of run labels and one labelled row per run.
    pub fn to_csv(&self) -> String {
        let quote = |s: &str| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_owned()
            }
        };
        let mut out = String::from("run");
        for l in &self.labels {
            out.push(',');
            out.push_str(&quote(l));
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.values) {
            out.push_str(&quote(l));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Dice matrix over runs that cover the same sequence ids. Spans are pooled
/// across the corpus as `(seq_id, start, end)` triples.
pub fn dice_matrix(runs: &[(String, SpanSets)]) -> Result<DiceMatrix> {
    if runs.len() < 2 {
        return Err(Error::Config("dice matrix needs at least two runs".into()));
    }
    let keys: BTreeSet<&String> = runs[0].1.keys().collect();
    for (label, sets) in &runs[1..] {
        if sets.keys().collect::<BTreeSet<_>>() != keys {
            return Err(Error::KeyMismatch(format!(
                "run {label:?} covers a different corpus than {:?}",
                runs[0].0
            )));
        }
    }
    let pooled: Vec<BTreeSet<(&str, usize, usize)>> = runs
        .iter()
        .map(|(_, sets)| {
            sets.iter()
                .flat_map(|(id, spans)| spans.iter().map(move |s| (id.as_str(), s.start, s.end)))
                .collect()
        })
        .collect();
    let k = runs.len();
    let mut values = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let d = dice(&pooled[a], &pooled[b]);
            values[a][b] = d;
            values[b][a] = d;
        }
    }
    Ok(DiceMatrix {
        labels: runs.iter().map(|(l, _)| l.clone()).collect(),
        values,
    })
}

/// Cohen's kappa for two binary annotators.
pub fn cohen_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "annotation lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("annotations"));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let pa = a.iter().filter(|&&x| x).count() as f64 / n;
    let pb = b.iter().filter(|&&x| x).count() as f64 / n;
    let p_o = agree / n;
    let p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
    if p_e == 1.0 {
        return Ok(if p_o == 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Fraction of positive verdicts.
pub fn judged_precision(verdicts: &[bool]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::Empty("verdicts"));
    }
    Ok(verdicts.iter().filter(|&&v| v).count() as f64 / verdicts.len() as f64)
}

/// Per-benchmark scores plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub benchmarks: BTreeMap<String, Prf>,
    pub mode: AggregateMode,
    pub aggregate: Prf,
}

impl EvalReport {
    pub fn new(benchmarks: BTreeMap<String, Prf>, mode: AggregateMode) -> Result<Self> {
        let reports: Vec<Prf> = benchmarks.values().copied().collect();
        let aggregate = aggregate(&reports, mode)?;
        Ok(EvalReport {
            benchmarks,
            mode,
            aggregate,
        })
    }
}
