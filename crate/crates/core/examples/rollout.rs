//! Predict a long horizon by feeding predictions back as context.
//!
//! ```text
//! cargo run --release --example rollout -- [run_dir] [horizon]
//! ```

use std::path::PathBuf;

use candle_core::DType;
use npvp::checkpoint::load_checkpoint;
use npvp::config::ModelConfig;
use npvp::datagen::{generate_clip, write_png, ShapesConfig};
use npvp::inference::{frame_strip, rollout_vfp, PredictMode};
use npvp::metrics::Metric;
use npvp::model::Npvp;

fn main() -> npvp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let horizon: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(30);

    let ckpt = root.join("predictor.ckpt");
    let model = if ckpt.exists() {
        load_checkpoint(&ckpt)?.model
    } else {
        log::warn!("{} not found, using an untrained model", ckpt.display());
        Npvp::new(ModelConfig::toy(), DType::F32, 0)?
    };

    let clip = generate_clip(
        &ShapesConfig {
            num_clips: 1,
            len: 10 + horizon,
            size: 32,
            num_shapes: 2,
            seed: 5,
        },
        0,
    )?;
    let context = clip.select(&(0..10).collect::<Vec<_>>());
    let r = rollout_vfp(&model, &context, horizon, 10, PredictMode::Deterministic, 0)?;
    println!("{} frames in {} blocks", r.frames.dim().0, r.blocks);

    for block in 0..r.blocks {
        let lo = block * 10;
        let hi = (lo + 10).min(horizon);
        let pred = r.frames.slice(ndarray::s![lo..hi, .., .., ..]).to_owned();
        let gt = clip.select(&(10 + lo..10 + hi).collect::<Vec<_>>());
        println!(
            "frames {lo:>3}..{hi:<3} PSNR {:.2} dB",
            Metric::Psnr.mean_over_frames(&pred, &gt)?
        );
    }
    std::fs::create_dir_all(&root)?;
    let out = root.join("rollout.png");
    write_png(&out, frame_strip(&r.frames).view())?;
    println!("wrote {}", out.display());
    Ok(())
}
