//! Per-sequence probe inputs and where they come from.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::params::{ProbeKind, ProbeShape};
use crate::error::{Error, Result};
use crate::repio::{read_tensor, AnnotatedSequence, TensorF32};

/// Row-major `rows x cols` view of f64 values.
#[derive(Debug, Clone, PartialEq)]
pub struct Reps {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Reps {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_tensor(t: &TensorF32) -> Result<Self> {
        match *t.shape() {
            [rows, cols] => Ok(Reps {
                rows,
                cols,
                data: t.data().iter().map(|&x| f64::from(x)).collect(),
            }),
            ref s => Err(Error::Dimension(format!(
                "expected an n x d tensor, got shape {s:?}"
            ))),
        }
    }
}

/// Everything a probe may read for one sequence.
///
/// `reps` is always required (it feeds the value probe). LTQK additionally
/// needs `queries`/`keys` (`heads x n x head_dim`), LCAttn needs `attention`
/// (`layers x heads x n x n`, pre-softmax query-key dot products, query index
/// first).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeInputs {
    pub reps: TensorF32,
    pub queries: Option<TensorF32>,
    pub keys: Option<TensorF32>,
    pub attention: Option<TensorF32>,
}

impl ProbeInputs {
    pub fn from_reps(reps: TensorF32) -> Self {
        ProbeInputs {
            reps,
            queries: None,
            keys: None,
            attention: None,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.reps.shape()[0]
    }

    /// Checks that the tensors a probe of `shape` reads are present and consistent.
    pub fn check(&self, shape: &ProbeShape) -> Result<()> {
        let rs = self.reps.shape();
        if rs.len() != 2 {
            return Err(Error::Dimension(format!("reps must be n x d, got {rs:?}")));
        }
        let n = rs[0];
        if rs[1] != shape.dim() {
            return Err(Error::Dimension(format!(
                "reps have width {}, probe expects {}",
                rs[1],
                shape.dim()
            )));
        }
        match *shape {
            ProbeShape::Tom { .. } => Ok(()),
            ProbeShape::Ltqk {
                heads, head_dim, ..
            } => {
                for (name, t) in [("queries", &self.queries), ("keys", &self.keys)] {
                    let t = t
                        .as_ref()
                        .ok_or_else(|| Error::Dimension(format!("ltqk probe needs {name}")))?;
                    if t.shape() != [heads, n, head_dim] {
                        return Err(Error::Dimension(format!(
                            "{name} shape {:?}, expected {:?}",
                            t.shape(),
                            [heads, n, head_dim]
                        )));
                    }
                }
                Ok(())
            }
            ProbeShape::Lcattn { layers, heads, .. } => {
                let t = self
                    .attention
                    .as_ref()
                    .ok_or_else(|| Error::Dimension("lcattn probe needs attention".into()))?;
                if t.shape() != [layers, heads, n, n] {
                    return Err(Error::Dimension(format!(
                        "attention shape {:?}, expected {:?}",
                        t.shape(),
                        [layers, heads, n, n]
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Supplies probe inputs for a dataset record.
pub trait RepSource: Sync {
    fn load(&self, seq: &AnnotatedSequence, kind: ProbeKind) -> Result<ProbeInputs>;
}

/// Reads `TOMR` files relative to a root directory.
///
/// The record's `rep_file` holds the `n x d` representations. LTQK and LCAttn
/// read sibling files named after its stem: `<stem>.q.tomr`, `<stem>.k.tomr`
/// and `<stem>.attn.tomr`.
#[derive(Debug, Clone)]
pub struct DirRepSource {
    root: PathBuf,
}

impl DirRepSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirRepSource { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn companion_path(&self, rep_file: &str, suffix: &str) -> PathBuf {
        let path = self.root.join(rep_file);
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        path.with_file_name(format!("{stem}.{suffix}.tomr"))
    }
}

impl RepSource for DirRepSource {
    fn load(&self, seq: &AnnotatedSequence, kind: ProbeKind) -> Result<ProbeInputs> {
        let reps = read_tensor(self.root.join(&seq.rep_file))?;
        if reps.ndim() != 2 || reps.shape()[0] != seq.n_tokens {
            return Err(Error::Dimension(format!(
                "{}: representation shape {:?} does not match n_tokens = {}",
                seq.seq_id,
                reps.shape(),
                seq.n_tokens
            )));
        }
        let mut inputs = ProbeInputs::from_reps(reps);
        match kind {
            ProbeKind::Tom => {}
            ProbeKind::Ltqk => {
                inputs.queries = Some(read_tensor(self.companion_path(&seq.rep_file, "q"))?);
                inputs.keys = Some(read_tensor(self.companion_path(&seq.rep_file, "k"))?);
            }
            ProbeKind::Lcattn => {
                inputs.attention = Some(read_tensor(self.companion_path(&seq.rep_file, "attn"))?);
            }
        }
        Ok(inputs)
    }
}

/// In-memory inputs keyed by `seq_id`.
#[derive(Debug, Clone, Default)]
pub struct MemoryRepSource {
    inputs: HashMap<String, ProbeInputs>,
}

impl MemoryRepSource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, seq_id: impl Into<String>, inputs: ProbeInputs) {
        self.inputs.insert(seq_id.into(), inputs);
    }

    pub fn get(&self, seq_id: &str) -> Option<&ProbeInputs> {
        self.inputs.get(seq_id)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

impl FromIterator<(String, ProbeInputs)> for MemoryRepSource {
    fn from_iter<I: IntoIterator<Item = (String, ProbeInputs)>>(iter: I) -> Self {
        MemoryRepSource {
            inputs: iter.into_iter().collect(),
        }
    }
}

impl RepSource for MemoryRepSource {
    fn load(&self, seq: &AnnotatedSequence, _kind: ProbeKind) -> Result<ProbeInputs> {
        let inputs = self.inputs.get(&seq.seq_id).ok_or_else(|| {
            Error::Config(format!("no representations for sequence {:?}", seq.seq_id))
        })?;
        if inputs.n_tokens() != seq.n_tokens {
            return Err(Error::Dimension(format!(
                "{}: {} representation rows for {} tokens",
                seq.seq_id,
                inputs.n_tokens(),
                seq.n_tokens
            )));
        }
        Ok(inputs.clone())
    }
}
