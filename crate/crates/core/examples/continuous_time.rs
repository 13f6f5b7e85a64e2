//! Query frames at fractional times between observed frames.
//!
//! ```text
//! cargo run --release --example continuous_time -- [run_dir]
//! ```

use std::path::PathBuf;

use candle_core::DType;
use npvp::checkpoint::load_checkpoint;
use npvp::config::ModelConfig;
use npvp::datagen::{generate_clip, ShapesConfig};
use npvp::inference::{frame_strip, predict, PredictionRequest};
use npvp::model::Npvp;

fn load_or_fresh(path: &std::path::Path) -> npvp::Result<Npvp> {
    if path.exists() {
        return Ok(load_checkpoint(path)?.model);
    }
    log::warn!("{} not found, using an untrained model", path.display());
    Npvp::new(ModelConfig::toy(), DType::F32, 0)
}

fn main() -> npvp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let model = load_or_fresh(&root.join("predictor.ckpt"))?;

    let clip = generate_clip(
        &ShapesConfig {
            num_clips: 1,
            len: 20,
            size: 32,
            num_shapes: 2,
            seed: 42,
        },
        0,
    )?;
    let ctx: Vec<usize> = (0..4).chain(9..13).collect();
    let times = vec![4.0, 4.25, 4.5, 4.75, 5.0];
    let req = PredictionRequest::deterministic(
        clip.select(&ctx),
        ctx.iter().map(|&i| i as f64).collect(),
        times.clone(),
    );
    let frames = predict(&model, &req)?.samples.remove(0);
    for (i, t) in times.iter().enumerate().skip(1) {
        let prev = frames.index_axis(ndarray::Axis(0), i - 1);
        let cur = frames.index_axis(ndarray::Axis(0), i);
        let diff = (&cur - &prev).mapv(f32::abs).mean().unwrap_or(0.0);
        println!("t = {t:<5} mean |frame(t) - frame(prev)| = {diff:.5}");
    }
    std::fs::create_dir_all(&root)?;
    let out = root.join("continuous_time.png");
    npvp::datagen::write_png(&out, frame_strip(&frames).view())?;
    println!("wrote {}", out.display());
    Ok(())
}
