//! Trains a rank-8 probe on planted-mention data and scores a held-out split.
//!
//! `cargo run --release --example train_synthetic [epochs] [seed]`

use std::collections::BTreeMap;

use tommer::decoding::threshold_decode;
use tommer::evaluation::{match_prf, SpanSets};
use tommer::probe::{ProbeKind, RepSource};
use tommer::synthetic::{generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(2, |a| a.parse().expect("epochs"));
    let seed = args.next().map_or(0, |a| a.parse().expect("seed"));

    let data = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let (train_set, held_out) = data.dataset.split_at(400);
    let config = TrainConfig {
        kind: ProbeKind::Tom,
        rank: 8,
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let outcome = train(train_set, &data.source, &config)?;
    for s in outcome.log.steps.iter().step_by(10) {
        println!(
            "step {:4}  loss {:.4}  alpha {:.1}  |g| {:.3}",
            s.step, s.loss, s.alpha, s.grad_norm
        );
    }

    let mut pred: SpanSets = BTreeMap::new();
    let mut gold: SpanSets = BTreeMap::new();
    for seq in held_out {
        let inputs = data.source.load(seq, ProbeKind::Tom)?;
        let probs = outcome.model.score(&inputs)?;
        let spans = threshold_decode(&probs, 0.5).into_iter().map(|s| s.span);
        pred.insert(seq.seq_id.clone(), spans.collect());
        gold.insert(seq.seq_id.clone(), seq.mentions.clone());
    }
    let prf = match_prf(&pred, &gold)?;
    println!(
        "held-out: P={:.4} R={:.4} F1={:.4} (tp={} fp={} fn={})",
        prf.precision, prf.recall, prf.f1, prf.tp, prf.fp, prf.fn_
    );
    println!("theta = {:?}", outcome.model.params.theta);
    Ok(())
}
