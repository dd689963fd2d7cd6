//! The `TOMR` dense tensor file.
//!
//! Layout (all little-endian):
//!
//! ```text
//! magic    4 bytes  "TOMR"
//! version  u32      1
//! ndim     u32
//! dims     ndim x u64
//! payload  prod(dims) x f32, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TOMR";
pub const TENSOR_VERSION: u32 = 1;

/// Dense row-major f32 tensor with a non-empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorF32 {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl TensorF32 {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(shape));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {numel} elements, data has {}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(TensorF32 { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(shape, vec![0.0; numel])
    }

    /// Builds an `n x d` tensor from f64 rows, rounding to f32.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::Dimension("ragged rows".into()));
            }
            data.extend(row.iter().map(|&x| x as f32));
        }
        Self::new(vec![n, d], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size in bytes of the encoded file.
    pub fn encoded_len(&self) -> usize {
        12 + 8 * self.shape.len() + 4 * self.data.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(&TENSOR_MAGIC);
        buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &dim in &self.shape {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = ByteCursor::new(bytes);
        let magic = cursor.array4()?;
        if magic != TENSOR_MAGIC {
            return Err(Error::BadMagic {
                expected: TENSOR_MAGIC,
                found: magic,
            });
        }
        let version = cursor.u32()?;
        if version != TENSOR_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let ndim = cursor.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let dim = cursor.u64()?;
            shape.push(usize::try_from(dim).map_err(|_| Error::InvalidShape(vec![]))?);
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(shape));
        }
        let numel = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        let payload = cursor.rest();
        let expected = numel
            .checked_mul(4)
            .ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        if payload.len() as u64 != expected {
            return Err(Error::PayloadLength {
                expected,
                found: payload.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorF32> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    TensorF32::from_bytes(&bytes)
}

pub fn write_tensor(tensor: &TensorF32, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Minimal little-endian reader over a byte slice. Running off the end is
/// reported as a payload length mismatch.
pub(crate) struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteCursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::PayloadLength {
                expected: (self.pos + len) as u64,
                found: self.bytes.len() as u64,
            }),
        }
    }

    pub(crate) fn array4(&mut self) -> Result<[u8; 4]> {
        let b = self.take(4)?;
        Ok([b[0], b[1], b[2], b[3]])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array4()?))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_le_bytes(arr))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dims: &[u64]) -> Vec<u8> {
        let mut buf = b"TOMR".to_vec();
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        buf
    }

    #[test]
    fn zero_tensor_from_handmade_bytes() {
        let mut bytes = header(&[3, 4]);
        bytes.extend_from_slice(&[0u8; 48]);
        let t = TensorF32::from_bytes(&bytes).unwrap();
        assert_eq!(t.shape(), &[3, 4]);
        assert!(t.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = header(&[3, 4]);
        let err = TensorF32::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn encoded_size_formula() {
        let t = TensorF32::new(vec![1, 1], vec![0.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(bytes.len(), 12 + 8 * 2 + 4);
        assert_eq!(bytes.len(), t.encoded_len());
        let t = TensorF32::new(vec![1], vec![0.0]).unwrap();
        assert_eq!(t.to_bytes().len(), 24);
    }

    #[test]
    fn empty_shape_is_rejected() {
        assert!(matches!(
            TensorF32::new(vec![], vec![]),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = header(&[1]);
        bytes.extend_from_slice(&0f32.to_le_bytes());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            TensorF32::from_bytes(&wrong),
            Err(Error::BadMagic { .. })
        ));
        let mut wrong = bytes.clone();
        wrong[4] = 2;
        assert!(matches!(
            TensorF32::from_bytes(&wrong),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn nan_is_rejected_on_load() {
        let mut bytes = header(&[2]);
        bytes.extend_from_slice(&1f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            TensorF32::from_bytes(&bytes),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn f64_payload_is_rejected() {
        // Same header, but 8-byte elements.
        let mut bytes = header(&[2]);
        bytes.extend_from_slice(&1f64.to_le_bytes());
        bytes.extend_from_slice(&2f64.to_le_bytes());
        assert!(matches!(
            TensorF32::from_bytes(&bytes),
            Err(Error::PayloadLength { .. })
        ));
    }
}
