//! Loss, gradients, optimisation and the training loops.

mod distill;
mod gradients;
mod loss;
mod optim;
mod trainer;

pub use distill::{distill_augment, distill_train, AugmentReport, DistillOutcome};
pub use gradients::{batch_loss, loss_gradients, BatchGradients, BatchItem};
pub use loss::{bbce_alpha, bbce_logit_gradients, bbce_loss, bbce_terms, BbceTerms, PROB_EPS};
pub use optim::{adamw_step, clip_gradients, global_norm, AdamWConfig, OptimState, ParamSet};
pub use trainer::{
    infer_shape, initial_params, split_dataset, train, Split, StepRecord, TrainConfig, TrainLog,
    TrainOutcome, ValidationRecord,
};
