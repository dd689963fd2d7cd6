//! Scores every span of one sequence and prints the features behind the
//! highest-probability spans.
//!
//! `cargo run --release --example score_spans`

use tommer::probe::{
    assemble_features, tom_match, value_probe, Matcher, ProbeKind, RepSource, THETA_ORDER,
};
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let data = generate(&SyntheticConfig::default())?;
    let config = TrainConfig {
        rank: 8,
        epochs: 20,
        ..TrainConfig::default()
    };
    let model = train(&data.dataset, &data.source, &config)?.model;

    let seq = &data.dataset[0];
    let inputs = data.source.load(seq, ProbeKind::Tom)?;
    let probs = model.score(&inputs)?;
    println!(
        "{}: {} tokens, {} candidate spans",
        seq.seq_id,
        seq.n_tokens,
        probs.spans.len()
    );
    println!("gold: {:?}", seq.mentions);

    let Matcher::Tom(tom) = &model.params.matcher else {
        unreachable!()
    };
    let m = tom_match(&inputs.reps, tom, model.window)?;
    let v = value_probe(&inputs.reps, &model.params.value)?;

    let mut ranked: Vec<_> = probs.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("features: {THETA_ORDER:?}");
    for (span, p) in ranked.into_iter().take(8) {
        let f = assemble_features(&m, &v, span)?;
        let mark = if seq.mentions.contains(&span) {
            "*"
        } else {
            " "
        };
        println!("{mark} {span:>8}  p={p:.3}  f={f:.3?}");
    }
    Ok(())
}
