//! Mention-span detection probes over frozen language-model representations.
//!
//! A probe reads per-token representations of a sequence, scores every span up
//! to a fixed window and decodes nested or flat mention sets. The crate also
//! covers training, self-distillation, evaluation metrics, an LLM judge client
//! and a span-typing head.

pub mod cli;
pub mod decoding;
pub mod error;
pub mod evaluation;
pub mod judge;
pub mod nerhead;
pub mod probe;
pub mod repio;
pub mod spanspace;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use spanspace::Span;
