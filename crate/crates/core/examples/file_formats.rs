//! Writes a small corpus in the on-disk formats, trains from disk, saves a
//! checkpoint and prints its manifest.
//!
//! `cargo run --example file_formats [dir]`

use tommer::probe::{DirRepSource, ProbeModel, RepSource};
use tommer::repio::{load_checkpoint, read_dataset, read_tensor, save_checkpoint};
use tommer::synthetic::{export, generate, SyntheticConfig};
use tommer::training::{train, TrainConfig};

fn main() -> tommer::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("tommer-formats"), Into::into);
    let data = generate(&SyntheticConfig {
        n_seqs: 50,
        heads: 2,
        ..SyntheticConfig::default()
    })?;
    let dataset_path = export(&data, &dir)?;
    println!("wrote {}", dataset_path.display());

    let dataset = read_dataset(&dataset_path)?;
    let first = &dataset[0];
    let reps = read_tensor(dir.join(&first.rep_file))?;
    println!(
        "{}: reps {:?}, mentions {:?}",
        first.seq_id,
        reps.shape(),
        first.mentions
    );

    let source = DirRepSource::new(&dir);
    let config = TrainConfig {
        rank: 4,
        epochs: 2,
        ..TrainConfig::default()
    };
    let model = train(&dataset, &source, &config)?.model;
    let ckpt_path = dir.join("probe.tomc");
    save_checkpoint(&model.to_checkpoint()?, &ckpt_path)?;

    let ckpt = load_checkpoint(&ckpt_path)?;
    println!("{}", serde_json::to_string_pretty(&ckpt.manifest)?);
    let reloaded = ProbeModel::from_checkpoint(&ckpt)?;
    let inputs = source.load(first, reloaded.kind())?;
    assert_eq!(reloaded.score(&inputs)?, model.score(&inputs)?);
    println!("reloaded checkpoint reproduces the scores");
    Ok(())
}
