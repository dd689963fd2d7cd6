//! Agreement between probes trained with different seeds, plus the metric
//! helpers for multi-benchmark reports and annotator agreement.
//!
//! `cargo run --release --example agreement_metrics`

use std::collections::BTreeMap;

use tommer::decoding::greedy_flat_decode;
use tommer::evaluation::{aggregate, cohen_kappa, dice_matrix, match_prf, AggregateMode, SpanSets};
use tommer::probe::RepSource;
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let data = generate(&SyntheticConfig::default())?;
    let (train_set, test_set) = data.dataset.split_at(400);

    let mut runs = Vec::new();
    for seed in 0..3 {
        let config = TrainConfig {
            rank: 8,
            epochs: 10,
            seed,
            ..TrainConfig::default()
        };
        let model = train(train_set, &data.source, &config)?.model;
        let mut sets: SpanSets = BTreeMap::new();
        for seq in test_set {
            let probs = model.score(&data.source.load(seq, model.kind())?)?;
            sets.insert(
                seq.seq_id.clone(),
                greedy_flat_decode(&probs, 0.5)
                    .into_iter()
                    .map(|s| s.span)
                    .collect(),
            );
        }
        runs.push((format!("seed{seed}"), sets));
    }
    print!("{}", dice_matrix(&runs)?.to_csv());

    // The held-out split as two "benchmarks" of different size.
    let gold: SpanSets = test_set
        .iter()
        .map(|s| (s.seq_id.clone(), s.mentions.clone()))
        .collect();
    let (small, large): (Vec<_>, Vec<_>) = gold.keys().cloned().partition(|k| k.ends_with('0'));
    let pick = |keys: &[String], sets: &SpanSets| -> SpanSets {
        keys.iter().map(|k| (k.clone(), sets[k].clone())).collect()
    };
    let reports = [
        match_prf(&pick(&small, &runs[0].1), &pick(&small, &gold))?,
        match_prf(&pick(&large, &runs[0].1), &pick(&large, &gold))?,
    ];
    for mode in [AggregateMode::Aggregated, AggregateMode::Averaged] {
        let a = aggregate(&reports, mode)?;
        println!(
            "{mode:?}: P={:.3} R={:.3} F1={:.3}",
            a.precision, a.recall, a.f1
        );
    }

    let judge = [true, true, false, true, false, true, true, true];
    let human = [true, false, false, true, false, true, true, false];
    println!("kappa(judge, human) = {:.3}", cohen_kappa(&judge, &human)?);
    Ok(())
}
