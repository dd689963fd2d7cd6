//! Matching scores, value probes and span probabilities.
//!
//! A probe scores every span `(i, j)` of length at most the window from five
//! features: the matching score between start and end token, the max and min
//! matching score of the inner tokens `k in (i, j]` against the end token, and
//! the value probe at `j` and `j + 1`. A logistic combiner without bias turns
//! them into a probability.

mod inputs;
mod matching;
mod model;
mod params;
mod scoring;

pub use inputs::{DirRepSource, MemoryRepSource, ProbeInputs, RepSource, Reps};
pub use matching::{
    lcattn_match, log_sigmoid, ltqk_match, sigmoid, tom_match, MatchMatrix, NORM_EPS,
};
pub use model::{ProbeModel, THETA_ORDER};
pub use params::{
    LcattnParams, LtqkParams, Matcher, ProbeKind, ProbeParams, ProbeShape, TomParams,
};
pub use scoring::{
    assemble_features, score_all_spans, span_logit, span_probability, value_probe, ProbeForward,
    SpanProbMatrix, LOGIT_CLAMP,
};
