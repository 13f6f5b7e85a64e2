//! Draw several stochastic predictions and keep the best against ground truth.
//!
//! ```text
//! cargo run --release --example best_of_n -- [run_dir] [samples]
//! ```

use std::path::PathBuf;

use candle_core::DType;
use npvp::checkpoint::load_checkpoint;
use npvp::config::ModelConfig;
use npvp::datagen::{generate_clip, ShapesConfig};
use npvp::inference::{
    best_of_n, predict, write_prediction, PredictionRequest, DEFAULT_NUM_SAMPLES,
};
use npvp::metrics::Metric;
use npvp::model::Npvp;

fn main() -> npvp::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let root = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let n: usize = args
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_NUM_SAMPLES);

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
            len: 20,
            size: 32,
            num_shapes: 2,
            seed: 3,
        },
        0,
    )?;
    let ctx: Vec<usize> = (0..10).collect();
    let tgt: Vec<usize> = (10..20).collect();
    let times = |v: &[usize]| v.iter().map(|&i| i as f64).collect::<Vec<_>>();
    let gt = clip.select(&tgt);

    let det = PredictionRequest::deterministic(clip.select(&ctx), times(&ctx), times(&tgt));
    let det_score = Metric::Psnr.mean_over_frames(&predict(&model, &det)?.samples[0], &gt)?;

    let req = PredictionRequest::sampled(clip.select(&ctx), times(&ctx), times(&tgt), n, 17);
    let best = best_of_n(&model, &req, &gt, Metric::Psnr)?;
    println!("prior mean: {det_score:.2} dB");
    for (i, s) in best.scores.iter().enumerate() {
        println!(
            "sample {i:>2}: {s:.2} dB{}",
            if i == best.best_index {
                "  <- best"
            } else {
                ""
            }
        );
    }

    let result = predict(&model, &req)?;
    let sidecar = write_prediction(
        &root.join("best_of_n"),
        &req,
        &result,
        Some((Metric::Psnr, &best.scores)),
    )?;
    println!("wrote {}", sidecar.display());
    Ok(())
}
