//! JSONL datasets of annotated token sequences.
//!
//! One record per line:
//!
//! ```json
//! {"seq_id":"a","n_tokens":5,"mentions":[[2,3]],"rep_file":"a.tomr","token_texts":["..."]}
//! ```
//!
//! Typed datasets carry `[s, e, "TYPE"]` triples instead of pairs. Indices are
//! 1-based and inclusive.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::spanspace::Span;

/// A token sequence with its gold mention set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub seq_id: String,
    pub n_tokens: usize,
    pub mentions: BTreeSet<Span>,
    pub rep_file: String,
    pub token_texts: Option<Vec<String>>,
}

impl AnnotatedSequence {
    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 {
            return Err(Error::Dimension(format!(
                "sequence {:?} has zero tokens",
                self.seq_id
            )));
        }
        if let Some(texts) = &self.token_texts {
            if texts.len() != self.n_tokens {
                return Err(Error::Dimension(format!(
                    "sequence {:?}: {} token texts for {} tokens",
                    self.seq_id,
                    texts.len(),
                    self.n_tokens
                )));
            }
        }
        for span in &self.mentions {
            if !span.fits(self.n_tokens) {
                return Err(Error::SpanOutOfRange {
                    start: span.start,
                    end: span.end,
                    n_tokens: self.n_tokens,
                });
            }
        }
        Ok(())
    }
}

/// A sequence whose mentions carry entity types.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedSequence {
    pub seq_id: String,
    pub n_tokens: usize,
    pub mentions: BTreeMap<Span, String>,
    pub rep_file: String,
    pub token_texts: Option<Vec<String>>,
}

impl TypedSequence {
    /// Drops the types.
    pub fn untyped(&self) -> AnnotatedSequence {
        AnnotatedSequence {
            seq_id: self.seq_id.clone(),
            n_tokens: self.n_tokens,
            mentions: self.mentions.keys().copied().collect(),
            rep_file: self.rep_file.clone(),
            token_texts: self.token_texts.clone(),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    seq_id: String,
    n_tokens: usize,
    #[serde(default)]
    mentions: Vec<Vec<Value>>,
    rep_file: String,
    #[serde(default)]
    token_texts: Option<Vec<String>>,
}

#[derive(Serialize)]
struct RecordOut<'a, M: Serialize> {
    seq_id: &'a str,
    n_tokens: usize,
    mentions: M,
    rep_file: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    token_texts: Option<&'a Vec<String>>,
}

fn parse_index(v: &Value, line: usize) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::MalformedRecord {
            line,
            message: format!("span index {v} is not a non-negative integer"),
        })
}

/// Parses one mention entry: `[s, e]` or `[s, e, "TYPE"]`.
fn parse_mention(entry: &[Value], line: usize) -> Result<(Span, Option<String>)> {
    let (s, e, ty) = match entry {
        [s, e] => (s, e, None),
        [s, e, Value::String(t)] => (s, e, Some(t.clone())),
        _ => {
            return Err(Error::MalformedRecord {
                line,
                message: format!("mention entry {entry:?} is not [s, e] or [s, e, \"TYPE\"]"),
            })
        }
    };
    let (s, e) = (parse_index(s, line)?, parse_index(e, line)?);
    Ok((Span { start: s, end: e }, ty))
}

fn check_span(span: Span, n_tokens: usize) -> Result<()> {
    if span.start < 1 || span.start > span.end || span.end > n_tokens {
        return Err(Error::SpanOutOfRange {
            start: span.start,
            end: span.end,
            n_tokens,
        });
    }
    Ok(())
}

fn for_each_record(path: &Path, mut f: impl FnMut(usize, RawRecord) -> Result<()>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, raw)?;
    }
    Ok(())
}

/// Reads an untyped dataset. Typed entries are accepted and their types ignored.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<AnnotatedSequence>> {
    let mut out = Vec::new();
    for_each_record(path.as_ref(), |line, raw| {
        let mut mentions = BTreeSet::new();
        for entry in &raw.mentions {
            let (span, _) = parse_mention(entry, line)?;
            check_span(span, raw.n_tokens)?;
            if !mentions.insert(span) {
                warn!(
                    "line {line}: duplicate mention {span} in {:?} dropped",
                    raw.seq_id
                );
            }
        }
        let seq = AnnotatedSequence {
            seq_id: raw.seq_id,
            n_tokens: raw.n_tokens,
            mentions,
            rep_file: raw.rep_file,
            token_texts: raw.token_texts,
        };
        seq.validate().map_err(|e| Error::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        out.push(seq);
        Ok(())
    })?;
    Ok(out)
}

/// Reads a typed dataset; every mention must carry a type.
pub fn read_typed_dataset(path: impl AsRef<Path>) -> Result<Vec<TypedSequence>> {
    let mut out = Vec::new();
    for_each_record(path.as_ref(), |line, raw| {
        let mut mentions = BTreeMap::new();
        for entry in &raw.mentions {
            let (span, ty) = parse_mention(entry, line)?;
            check_span(span, raw.n_tokens)?;
            let ty = ty.ok_or_else(|| Error::MalformedRecord {
                line,
                message: format!("mention {span} has no type"),
            })?;
            if let Some(prev) = mentions.get(&span) {
                warn!("line {line}: mention {span} typed twice ({prev:?}, {ty:?}); keeping first");
                continue;
            }
            mentions.insert(span, ty);
        }
        out.push(TypedSequence {
            seq_id: raw.seq_id,
            n_tokens: raw.n_tokens,
            mentions,
            rep_file: raw.rep_file,
            token_texts: raw.token_texts,
        });
        Ok(())
    })?;
    Ok(out)
}

fn write_lines<T>(
    items: &[T],
    path: &Path,
    mut to_json: impl FnMut(&T) -> serde_json::Result<String>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = to_json(item)?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset(seqs: &[AnnotatedSequence], path: impl AsRef<Path>) -> Result<()> {
    write_lines(seqs, path.as_ref(), |s| {
        let mentions: Vec<[usize; 2]> = s.mentions.iter().map(|m| [m.start, m.end]).collect();
        serde_json::to_string(&RecordOut {
            seq_id: &s.seq_id,
            n_tokens: s.n_tokens,
            mentions,
            rep_file: &s.rep_file,
            token_texts: s.token_texts.as_ref(),
        })
    })
}

pub fn write_typed_dataset(seqs: &[TypedSequence], path: impl AsRef<Path>) -> Result<()> {
    write_lines(seqs, path.as_ref(), |s| {
        let mentions: Vec<(usize, usize, &str)> = s
            .mentions
            .iter()
            .map(|(m, t)| (m.start, m.end, t.as_str()))
            .collect();
        serde_json::to_string(&RecordOut {
            seq_id: &s.seq_id,
            n_tokens: s.n_tokens,
            mentions,
            rep_file: &s.rep_file,
            token_texts: s.token_texts.as_ref(),
        })
    })
}
