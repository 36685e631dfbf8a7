//! Trains the three objectives on the default benchmark and prints target
//! mIoU and temporal consistency per seed.
//!
//! `cargo run --release -p tps --example desk -- [data_dir] [iters] [seeds]`

use std::path::PathBuf;
use std::time::Instant;

use tps::harness::{evaluate_run, load_eval_clips};
use tps::synth::{gen_dataset, DatasetManifest, GenConfig};
use tps::train::{train_on, Objective, TrainConfig, TrainingData};

fn main() -> tps::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "target/desk-data".into()));
    let iters = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let manifest = match DatasetManifest::load(&dir) {
        Ok(m) => m,
        Err(_) => gen_dataset(&GenConfig::default(), &dir)?,
    };
    let data = TrainingData::load(&manifest)?;
    let eval = load_eval_clips(&manifest)?;
    for objective in [Objective::SourceOnly, Objective::PixMatch, Objective::Tps] {
        for seed in 0..seeds {
            let config = TrainConfig {
                iters,
                ..TrainConfig::desk(objective, seed)
            };
            let start = Instant::now();
            let out = train_on(&data, &config)?;
            let report = evaluate_run(&out.model, &eval, &config, serde_json::Value::Null)?;
            println!(
                "{:<12} seed {seed}: miou {:.4} tc {:.4} ({:.1}s)",
                objective.name(),
                report.miou,
                report.temporal_consistency,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
