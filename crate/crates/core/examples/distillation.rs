//! Drops a share of the gold mentions, then compares a probe trained on the
//! sparse labels with one trained after a round of self-distillation.
//!
//! `cargo run --release --example distillation [drop_fraction]`

use std::collections::BTreeMap;

use tommer::decoding::threshold_decode;
use tommer::evaluation::{match_prf, Prf, SpanSets};
use tommer::probe::{ProbeModel, RepSource};
use tommer::repio::AnnotatedSequence;
use tommer::synthetic::{drop_labels, generate, SyntheticConfig, SyntheticData};
use tommer::training::{distill_augment, distill_train, train, TrainConfig};

fn held_out(
    model: &ProbeModel,
    data: &SyntheticData,
    seqs: &[AnnotatedSequence],
) -> tommer::Result<Prf> {
    let mut pred: SpanSets = BTreeMap::new();
    for seq in seqs {
        let probs = model.score(&data.source.load(seq, model.kind())?)?;
        let spans = threshold_decode(&probs, 0.5)
            .into_iter()
            .map(|s| s.span)
            .collect();
        pred.insert(seq.seq_id.clone(), spans);
    }
    let gold = seqs
        .iter()
        .map(|s| (s.seq_id.clone(), s.mentions.clone()))
        .collect();
    match_prf(&pred, &gold)
}

fn main() -> tommer::Result<()> {
    env_logger::init();
    let fraction: f64 = std::env::args()
        .nth(1)
        .map_or(0.3, |a| a.parse().expect("fraction"));
    let data = generate(&SyntheticConfig::default())?;
    let (train_set, test_set) = data.dataset.split_at(400);
    let sparse = drop_labels(train_set, fraction, 0);

    let config = TrainConfig {
        rank: 8,
        epochs: 20,
        distill_phases: 1,
        ..TrainConfig::default()
    };
    let teacher = train(&sparse, &data.source, &config)?.model;
    let (_, report) = distill_augment(&sparse, &data.source, &teacher, config.teacher_threshold)?;
    println!(
        "teacher added {} spans to {} labelled ({} sequences touched)",
        report.added, report.original, report.sequences_touched
    );

    let student = distill_train(&sparse, &data.source, &config)?.model;
    for (name, model) in [("phase 0", &teacher), ("distilled", &student)] {
        let prf = held_out(model, &data, test_set)?;
        println!(
            "{name:>9}: P={:.3} R={:.3} F1={:.3}",
            prf.precision, prf.recall, prf.f1
        );
    }
    Ok(())
}
