//! PSNR and SSIM on synthetic degradations, plus a per-frame report.
//!
//! ```text
//! cargo run --example metrics -- [out_dir]
//! ```

use std::path::PathBuf;

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npvp::datagen::{generate_clip, ShapesConfig};
use npvp::metrics::{psnr, report, ssim};

fn main() -> npvp::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| "example_runs".into());
    let clip = generate_clip(
        &ShapesConfig {
            num_clips: 1,
            len: 10,
            size: 32,
            num_shapes: 2,
            seed: 1,
        },
        0,
    )?;
    let frame = clip.frame(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for sigma in [0.0f32, 0.01, 0.05, 0.1, 0.2] {
        let noisy = frame.mapv(|v| (v + sigma * (rng.gen::<f32>() * 2.0 - 1.0)).clamp(0.0, 1.0));
        println!(
            "uniform noise {sigma:<4}: PSNR {:>7.2} dB  SSIM {:.4}",
            psnr(frame, noisy.view(), 1.0)?,
            ssim(frame, noisy.view())?
        );
    }

    // Each frame paired with its successor: motion lowers both scores.
    let n = clip.len() - 1;
    let pred: Array4<f32> = clip.select(&(0..n).collect::<Vec<_>>());
    let gt: Array4<f32> = clip.select(&(1..=n).collect::<Vec<_>>());
    let times: Vec<f64> = (1..=n).map(|t| t as f64).collect();
    let rep = report(&[pred], &[gt], &[times])?;
    println!(
        "copy-previous baseline: PSNR {:.2} dB, SSIM {:.4}",
        rep.mean_psnr, rep.mean_ssim
    );
    std::fs::create_dir_all(&root)?;
    rep.write_csv(&root.join("metrics_example.csv"))?;
    rep.write_json(&root.join("metrics_example.json"))?;
    println!("wrote {}", root.join("metrics_example.csv").display());
    Ok(())
}
