//! Inspect the Fourier-feature coordinate encoding at integer and fractional
//! times.
//!
//! ```text
//! cargo run --example coordinate_encoding
//! ```

use candle_core::{DType, Tensor};
use npvp::config::ModelConfig;
use npvp::coords::{fourier_features, make_coord_grid};
use npvp::model::Npvp;

fn distance(a: &Tensor, b: &Tensor) -> npvp::Result<f64> {
    Ok((a - b)?
        .sqr()?
        .mean_all()?
        .sqrt()?
        .to_dtype(DType::F64)?
        .to_scalar()?)
}

fn main() -> npvp::Result<()> {
    let cfg = ModelConfig::toy();
    let model = Npvp::new(cfg.clone(), DType::F32, 0)?;

    let grid = make_coord_grid(cfg.window_len, &[0.0, 4.5, 19.0], cfg.grid(), cfg.grid())?;
    println!("coordinate grid {:?}", grid.coords().dim());
    println!(
        "corner at t = 4.5: {:?}",
        grid.coords().slice(ndarray::s![1, cfg.grid() - 1, 0, ..])
    );

    let basis = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.5]];
    let f = fourier_features([0.25, 0.5, 0.5], &basis);
    println!("hand basis features of (0.25, 0.5, 0.5): {f:.3?}");

    // Encodings move smoothly as time moves between frames.
    let times = [4.0, 4.25, 4.5, 5.0, 10.0];
    let enc = model.encode_times(&times)?;
    println!("encoding tensor {:?} (L, N, D)", enc.dims());
    let first = enc.get(0)?;
    for (i, t) in times.iter().enumerate().skip(1) {
        println!(
            "rms distance t=4 to t={t:<5}: {:.4}",
            distance(&first, &enc.get(i)?)?
        );
    }
    Ok(())
}
