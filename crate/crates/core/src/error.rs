use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: u64, found: u64 },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),

    #[error("span out of range: ({start}, {end}) with n_tokens = {n_tokens}")]
    SpanOutOfRange {
        start: usize,
        end: usize,
        n_tokens: usize,
    },

    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown entity type {0:?}")]
    UnknownType(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("key mismatch: {0}")]
    KeyMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::PayloadLength { .. } => "payload_length",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidShape(_) => "invalid_shape",
            Error::SpanOutOfRange { .. } => "span_out_of_range",
            Error::MalformedRecord { .. } => "malformed_record",
            Error::Manifest(_) => "manifest",
            Error::Dimension(_) => "dimension",
            Error::UnknownType(_) => "unknown_type",
            Error::Config(_) => "config",
            Error::Empty(_) => "empty",
            Error::KeyMismatch(_) => "key_mismatch",
            Error::Json(_) => "json",
        }
    }

    /// True for errors caused by missing or unreadable inputs and bad configuration,
    /// as opposed to failures during computation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Config(_)
                | Error::MalformedRecord { .. }
                | Error::BadMagic { .. }
                | Error::UnsupportedVersion(_)
                | Error::PayloadLength { .. }
                | Error::Manifest(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
