//! Trains a span-typing head on flat detector output and scores typed predictions.
//! Planted mentions are typed by length, so the head must read the span
//! endpoints to tell them apart.
//!
//! `cargo run --release --example ner_head`

use std::collections::BTreeMap;

use tommer::decoding::greedy_flat_decode;
use tommer::evaluation::SpanSets;
use tommer::nerhead::{ner_f1, predict_types, train_ner_head, MentionSource, NerTrainConfig};
use tommer::probe::{ProbeKind, RepSource, Reps};
use tommer::repio::{TypedPredictionRecord, TypedSequence};
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let data = generate(&SyntheticConfig::default())?;
    let typed: Vec<TypedSequence> = data
        .dataset
        .iter()
        .map(|s| TypedSequence {
            seq_id: s.seq_id.clone(),
            n_tokens: s.n_tokens,
            mentions: s
                .mentions
                .iter()
                .map(|m| (*m, if m.len() == 1 { "SHORT" } else { "LONG" }.to_owned()))
                .collect(),
            rep_file: s.rep_file.clone(),
            token_texts: None,
        })
        .collect();
    let (train_typed, test_typed) = typed.split_at(400);

    let detector = train(
        &data.dataset[..400],
        &data.source,
        &TrainConfig {
            rank: 8,
            epochs: 20,
            ..TrainConfig::default()
        },
    )?
    .model;
    let mut predicted: SpanSets = BTreeMap::new();
    for seq in &data.dataset {
        let probs = detector.score(&data.source.load(seq, ProbeKind::Tom)?)?;
        predicted.insert(
            seq.seq_id.clone(),
            greedy_flat_decode(&probs, 0.5)
                .into_iter()
                .map(|s| s.span)
                .collect(),
        );
    }

    let config = NerTrainConfig {
        hidden: 128,
        mention_source: MentionSource::Predictions,
        ..NerTrainConfig::default()
    };
    let head = train_ner_head(train_typed, &data.source, Some(&predicted), &config)?;
    println!("labels: {:?}", head.labels);

    let mut records = Vec::new();
    for seq in test_typed {
        let reps = Reps::from_tensor(&data.source.load(&seq.untyped(), ProbeKind::Tom)?.reps)?;
        let spans = predict_types(&reps, &predicted[&seq.seq_id], &head)?;
        records.push(TypedPredictionRecord {
            seq_id: seq.seq_id.clone(),
            spans: spans
                .into_iter()
                .map(|(s, t)| (s.start, s.end, t))
                .collect(),
        });
    }
    let prf = ner_f1(&records, test_typed)?;
    println!(
        "typed held-out: P={:.3} R={:.3} F1={:.3}",
        prf.precision, prf.recall, prf.f1
    );
    Ok(())
}
