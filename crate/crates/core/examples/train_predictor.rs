//! Train the predictor on top of a frozen autoencoder checkpoint.
//!
//! ```text
//! cargo run --release --example train_predictor -- [run_dir] [steps]
//! ```
//!
//! Expects `run_dir/ae.ckpt` from the `train_autoencoder` example.

use std::path::PathBuf;

use npvp::checkpoint::load_checkpoint;
use npvp::config::{ModelConfig, Stage, TrainConfig};
use npvp::datagen::{generate_moving_shapes, load_dataset, ShapesConfig, SplitSpec};
use npvp::training::{train_predictor, write_history_csv};

fn main() -> npvp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(200);

    let ae = load_checkpoint(&root.join("ae.ckpt"))?.model;
    let data_dir = root.join("data");
    let clips = if data_dir.join("manifest.json").exists() {
        load_dataset(&data_dir)?.clips
    } else {
        generate_moving_shapes(&ShapesConfig {
            num_clips: 64,
            len: 20,
            size: 32,
            num_shapes: 2,
            seed: 0,
        })?
    };

    let cfg = TrainConfig {
        max_steps: Some(steps),
        split_policy: SplitSpec::Vrc {
            min_context: 4,
            max_context: 16,
        },
        ..TrainConfig::toy(Stage::Predictor)
    };
    let trainer = train_predictor(&clips, &ae, &ModelConfig::toy(), &cfg)?;
    let h = trainer.history();
    let (first, last) = (h.first().unwrap(), h.last().unwrap());
    println!(
        "feature L1 {:.4} -> {:.4}, pixel L1 {:.4} -> {:.4}, final kl {:.3}",
        first.feature_l1, last.feature_l1, first.pixel_l1, last.pixel_l1, last.kl
    );

    trainer.save(&root.join("predictor.ckpt"))?;
    write_history_csv(&root.join("predictor_metrics.csv"), h)?;
    println!("saved {}", root.join("predictor.ckpt").display());
    Ok(())
}
