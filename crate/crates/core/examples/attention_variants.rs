//! Trains the three probe variants on data with synthetic attention heads and
//! reports held-out scores and parameter counts.
//!
//! `cargo run --release --example attention_variants [epochs]`

use std::collections::BTreeMap;

use tommer::decoding::threshold_decode;
use tommer::evaluation::{match_prf, SpanSets};
use tommer::probe::{ProbeKind, RepSource};
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(20, |a| a.parse().expect("epochs"));
    let data = generate(&SyntheticConfig {
        heads: 4,
        ..SyntheticConfig::default()
    })?;
    let (train_set, test_set) = data.dataset.split_at(400);
    let gold: SpanSets = test_set
        .iter()
        .map(|s| (s.seq_id.clone(), s.mentions.clone()))
        .collect();

    for kind in [ProbeKind::Tom, ProbeKind::Ltqk, ProbeKind::Lcattn] {
        let config = TrainConfig {
            kind,
            rank: 8,
            epochs,
            ..TrainConfig::default()
        };
        let model = train(train_set, &data.source, &config)?.model;
        let mut pred: SpanSets = BTreeMap::new();
        for seq in test_set {
            let probs = model.score(&data.source.load(seq, kind)?)?;
            pred.insert(
                seq.seq_id.clone(),
                threshold_decode(&probs, 0.5)
                    .into_iter()
                    .map(|s| s.span)
                    .collect(),
            );
        }
        let prf = match_prf(&pred, &gold)?;
        println!(
            "{:<7} params={:<5} P={:.3} R={:.3} F1={:.3}",
            kind.as_str(),
            model.params.num_params(),
            prf.precision,
            prf.recall,
            prf.f1
        );
    }
    Ok(())
}
