//! Train the frame autoencoder on a generated dataset and save a checkpoint.
//!
//! ```text
//! cargo run --release --example train_autoencoder -- [run_dir] [steps]
//! ```

use std::path::PathBuf;

use npvp::config::{ModelConfig, Stage, TrainConfig};
use npvp::datagen::{generate_moving_shapes, load_dataset, ShapesConfig};
use npvp::training::{train_autoencoder, write_history_csv};

fn main() -> npvp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let steps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(300);

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
    let held_out = generate_moving_shapes(&ShapesConfig {
        num_clips: 8,
        len: 20,
        size: 32,
        num_shapes: 2,
        seed: 999,
    })?;

    let cfg = TrainConfig {
        max_steps: Some(steps),
        ..TrainConfig::toy(Stage::Autoencoder)
    };
    let trainer = train_autoencoder(&clips, &ModelConfig::toy(), &cfg)?;
    println!(
        "{steps} steps: train L1 {:.4}, held-out L1 {:.4}",
        trainer.evaluate(&clips[..8.min(clips.len())])?,
        trainer.evaluate(&held_out)?
    );

    std::fs::create_dir_all(&root)?;
    trainer.save(&root.join("ae.ckpt"))?;
    write_history_csv(&root.join("ae_metrics.csv"), trainer.history())?;
    println!("saved {}", root.join("ae.ckpt").display());
    Ok(())
}
