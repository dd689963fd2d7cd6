//! Compares nested threshold decoding with greedy flat decoding over a sweep
//! of thresholds.
//!
//! `cargo run --release --example decode_modes`

use tommer::decoding::{decode, greedy_flat_decode, threshold_decode};
use tommer::evaluation::{match_prf, SpanSets};
use tommer::probe::{ProbeKind, RepSource};
use tommer::repio::DecodeMode;
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let data = generate(&SyntheticConfig::default())?;
    let (train_set, held_out) = data.dataset.split_at(400);
    let config = TrainConfig {
        rank: 8,
        epochs: 20,
        ..TrainConfig::default()
    };
    let model = train(train_set, &data.source, &config)?.model;

    let scored: Vec<_> = held_out
        .iter()
        .map(|seq| Ok((seq, model.score(&data.source.load(seq, ProbeKind::Tom)?)?)))
        .collect::<tommer::Result<_>>()?;
    let gold: SpanSets = held_out
        .iter()
        .map(|s| (s.seq_id.clone(), s.mentions.clone()))
        .collect();

    println!("  tau   mode       P      R      F1");
    for tau in [0.3, 0.5, 0.7, 0.9] {
        for mode in [DecodeMode::Threshold, DecodeMode::Greedy] {
            let pred: SpanSets = scored
                .iter()
                .map(|(seq, probs)| {
                    let spans = decode(probs, tau, mode)
                        .into_iter()
                        .map(|s| s.span)
                        .collect();
                    (seq.seq_id.clone(), spans)
                })
                .collect();
            let prf = match_prf(&pred, &gold)?;
            println!(
                "  {tau:.1}   {:<9} {:.3}  {:.3}  {:.3}",
                format!("{mode:?}"),
                prf.precision,
                prf.recall,
                prf.f1
            );
        }
    }

    let (seq, probs) = &scored[0];
    let nested: Vec<_> = threshold_decode(probs, 0.5)
        .iter()
        .map(|s| s.span.to_string())
        .collect();
    let flat: Vec<_> = greedy_flat_decode(probs, 0.5)
        .iter()
        .map(|s| s.span.to_string())
        .collect();
    println!("\n{}: gold {:?}", seq.seq_id, seq.mentions);
    println!("threshold: {}", nested.join(" "));
    println!("greedy:    {}", flat.join(" "));
    Ok(())
}
