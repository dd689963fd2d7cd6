//! Prediction JSONL files.
//!
//! Mention predictions: `{"seq_id", "spans": [[s, e, p], ...], "mode": "threshold"|"greedy"}`.
//! Typed predictions: `{"seq_id", "spans": [[s, e, "TYPE"], ...]}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spanspace::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Threshold,
    Greedy,
}

impl std::str::FromStr for DecodeMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "threshold" => Ok(DecodeMode::Threshold),
            "greedy" => Ok(DecodeMode::Greedy),
            other => Err(format!("unknown decode mode {other:?}")),
        }
    }
}

/// A span with its predicted probability; serialized as `[s, e, p]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, f64)", into = "(usize, usize, f64)")]
pub struct ScoredSpan {
    pub span: Span,
    pub prob: f64,
}

impl From<(usize, usize, f64)> for ScoredSpan {
    fn from((s, e, p): (usize, usize, f64)) -> Self {
        ScoredSpan {
            span: Span { start: s, end: e },
            prob: p,
        }
    }
}

impl From<ScoredSpan> for (usize, usize, f64) {
    fn from(s: ScoredSpan) -> Self {
        (s.span.start, s.span.end, s.prob)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub seq_id: String,
    pub spans: Vec<ScoredSpan>,
    pub mode: DecodeMode,
}

impl PredictionRecord {
    pub fn span_set(&self) -> std::collections::BTreeSet<Span> {
        self.spans.iter().map(|s| s.span).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedPredictionRecord {
    pub seq_id: String,
    pub spans: Vec<(usize, usize, String)>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                line: idx + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = read_jsonl(path.as_ref())?;
    for (idx, r) in records.iter().enumerate() {
        if let Some(bad) = r
            .spans
            .iter()
            .find(|s| s.span.start < 1 || s.span.start > s.span.end)
        {
            return Err(Error::MalformedRecord {
                line: idx + 1,
                message: format!("invalid span {:?}", bad.span),
            });
        }
    }
    Ok(records)
}

pub fn write_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_jsonl(records, path.as_ref())
}

pub fn read_typed_predictions(path: impl AsRef<Path>) -> Result<Vec<TypedPredictionRecord>> {
    read_jsonl(path.as_ref())
}

pub fn write_typed_predictions(
    records: &[TypedPredictionRecord],
    path: impl AsRef<Path>,
) -> Result<()> {
    write_jsonl(records, path.as_ref())
}
