//! The `TOMC` checkpoint container.
//!
//! ```text
//! magic     4 bytes  "TOMC"
//! version   u32 LE   1
//! mlen      u64 LE   manifest length in bytes
//! manifest  mlen bytes of UTF-8 JSON
//! blobs     f32 LE, concatenated in the order of manifest["blobs"]
//! ```
//!
//! The manifest is a JSON object. Its `"blobs"` entry lists `{"name", "shape"}`
//! for every weight blob and is written by [`save_checkpoint`] from the blobs
//! themselves; everything else is opaque to the container.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::tensor::ByteCursor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TOMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlobSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub spec: BlobSpec,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let spec = BlobSpec {
            name: name.into(),
            shape,
        };
        if spec.numel() != data.len() {
            return Err(Error::Manifest(format!(
                "blob {:?} has shape {:?} but {} values",
                spec.name,
                spec.shape,
                data.len()
            )));
        }
        Ok(Blob { spec, data })
    }
}

/// Manifest plus weight blobs.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Map<String, Value>,
    pub blobs: Vec<Blob>,
}

impl Checkpoint {
    pub fn blob(&self, name: &str) -> Result<&Blob> {
        self.blobs
            .iter()
            .find(|b| b.spec.name == name)
            .ok_or_else(|| Error::Manifest(format!("missing blob {name:?}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = self.manifest.clone();
        let specs: Vec<&BlobSpec> = self.blobs.iter().map(|b| &b.spec).collect();
        manifest.insert("blobs".into(), serde_json::to_value(specs)?);
        let text = serde_json::to_string(&manifest)?;

        let payload: usize = self.blobs.iter().map(|b| b.data.len() * 4).sum();
        let mut buf = Vec::with_capacity(16 + text.len() + payload);
        buf.extend_from_slice(&CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for blob in &self.blobs {
            for &x in &blob.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = ByteCursor::new(bytes);
        let magic = cursor.array4()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            });
        }
        let version = cursor.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mlen = usize::try_from(cursor.u64()?)
            .map_err(|_| Error::Manifest("manifest length overflows".into()))?;
        let text = std::str::from_utf8(cursor.take(mlen)?)
            .map_err(|e| Error::Manifest(format!("manifest is not UTF-8: {e}")))?;
        let mut manifest: Map<String, Value> = serde_json::from_str(text)?;
        let specs: Vec<BlobSpec> = match manifest.remove("blobs") {
            Some(v) => serde_json::from_value(v)?,
            None => return Err(Error::Manifest("manifest has no \"blobs\" entry".into())),
        };

        let payload = cursor.rest();
        let expected: u64 = specs.iter().map(|s| s.numel() as u64 * 4).sum();
        if payload.len() as u64 != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len() as u64,
            });
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let mut blobs = Vec::with_capacity(specs.len());
        for spec in specs {
            let data: Vec<f32> = floats.by_ref().take(spec.numel()).collect();
            if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(idx));
            }
            blobs.push(Blob { spec, data });
        }
        Ok(Checkpoint { manifest, blobs })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
