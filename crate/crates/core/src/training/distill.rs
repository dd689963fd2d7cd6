//! Self-distillation: a trained teacher labels confident unannotated spans as
//! positives and a student is retrained on the augmented labels.

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train_phase, TrainConfig, TrainLog, TrainOutcome};
use crate::error::{Error, Result};
use crate::probe::{ProbeModel, RepSource};
use crate::repio::AnnotatedSequence;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentReport {
    /// Pseudo-positive spans added across the dataset.
    pub added: usize,
    /// Positives present before augmentation.
    pub original: usize,
    /// Sequences that received at least one new span.
    pub sequences_touched: usize,
}

/// Adds every span the teacher scores at or above `threshold` to the
/// sequence's mentions. Existing mentions are kept as they are.
pub fn distill_augment(
    dataset: &[AnnotatedSequence],
    source: &dyn RepSource,
    teacher: &ProbeModel,
    threshold: f64,
) -> Result<(Vec<AnnotatedSequence>, AugmentReport)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "teacher threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let kind = teacher.kind();
    let augmented: Vec<(AnnotatedSequence, usize)> = dataset
        .par_iter()
        .map(|seq| {
            let inputs = source.load(seq, kind)?;
            let probs = teacher.score(&inputs)?;
            let mut out = seq.clone();
            let mut added = 0;
            for (span, p) in probs.iter() {
                if p >= threshold && out.mentions.insert(span) {
                    added += 1;
                }
            }
            Ok((out, added))
        })
        .collect::<Result<_>>()?;

    let mut report = AugmentReport {
        original: dataset.iter().map(|s| s.mentions.len()).sum(),
        ..AugmentReport::default()
    };
    let seqs = augmented
        .into_iter()
        .map(|(seq, added)| {
            report.added += added;
            report.sequences_touched += usize::from(added > 0);
            seq
        })
        .collect();
    Ok((seqs, report))
}

pub struct DistillOutcome {
    pub model: ProbeModel,
    /// One log per phase, phase 0 first.
    pub logs: Vec<TrainLog>,
    /// One report per distillation phase.
    pub augment_reports: Vec<AugmentReport>,
}

/// Phase 0 trains on the raw labels; each later phase re-labels the original
/// dataset with the previous model as teacher and retrains. Validation always
/// scores against the original labels.
pub fn distill_train(
    dataset: &[AnnotatedSequence],
    source: &dyn RepSource,
    config: &TrainConfig,
) -> Result<DistillOutcome> {
    let TrainOutcome { mut model, log, .. } =
        train_phase(dataset, dataset, source, config, 0, None)?;
    let mut logs = vec![log];
    let mut augment_reports = Vec::new();
    for phase in 1..=config.distill_phases {
        let (augmented, report) =
            distill_augment(dataset, source, &model, config.teacher_threshold)?;
        info!(
            "distillation phase {phase}: {} pseudo-positives added to {} gold",
            report.added, report.original
        );
        augment_reports.push(report);
        let warm = (!config.reset_student).then(|| model.params.clone());
        let outcome = train_phase(&augmented, dataset, source, config, phase as u64, warm)?;
        model = outcome.model;
        logs.push(outcome.log);
    }
    Ok(DistillOutcome {
        model,
        logs,
        augment_reports,
    })
}
