//! Readers and writers for representation tensors, datasets and checkpoints.

mod checkpoint;
mod dataset;
mod predictions;
mod tensor;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Blob, BlobSpec, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use dataset::{
    read_dataset, read_typed_dataset, write_dataset, write_typed_dataset, AnnotatedSequence,
    TypedSequence,
};
pub use predictions::{
    read_predictions, read_typed_predictions, write_predictions, write_typed_predictions,
    DecodeMode, PredictionRecord, ScoredSpan, TypedPredictionRecord,
};
pub use tensor::{read_tensor, write_tensor, TensorF32, TENSOR_MAGIC, TENSOR_VERSION};
