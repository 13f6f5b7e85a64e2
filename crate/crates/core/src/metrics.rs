//! PSNR and SSIM over `H x W x C` frames with values in `[0, 1]`.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Returned when the mean squared error is below [`PSNR_MSE_FLOOR`].
pub const PSNR_CAP: f64 = 100.0;
pub const PSNR_MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Psnr,
    Ssim,
}

impl Metric {
    pub fn eval(self, a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> Result<f64> {
        match self {
            Metric::Psnr => psnr(a, b, 1.0),
            Metric::Ssim => ssim(a, b),
        }
    }

    /// Mean of the per-frame metric over two aligned `L x H x W x C` stacks.
    pub fn mean_over_frames(self, a: &Array4<f32>, b: &Array4<f32>) -> Result<f64> {
        if a.dim() != b.dim() || a.dim().0 == 0 {
            return Err(Error::Metric(format!(
                "cannot compare stacks {:?} and {:?}",
                a.dim(),
                b.dim()
            )));
        }
        let mut sum = 0.0;
        for (x, y) in a.outer_iter().zip(b.outer_iter()) {
            sum += self.eval(x, y)?;
        }
        Ok(sum / a.dim().0 as f64)
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            other => Err(Error::Metric(format!("unknown metric {other:?}"))),
        }
    }
}

fn same_shape(a: &ArrayView3<'_, f32>, b: &ArrayView3<'_, f32>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch(format!(
            "frames {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `10 log10(max^2 / mse)`, capped at [`PSNR_CAP`].
pub fn psnr(a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>, max_val: f64) -> Result<f64> {
    same_shape(&a, &b)?;
    if a.is_empty() {
        return Err(Error::Metric("empty frame".into()));
    }
    let mse = a
        .iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse < PSNR_MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let (h, w) = x.dim();
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..k).map(|t| taps[t] * x[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

fn ssim_plane(a: ArrayView2<'_, f32>, b: ArrayView2<'_, f32>, taps: &[f64]) -> f64 {
    let x = a.mapv(f64::from);
    let y = b.mapv(f64::from);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mx = filter_valid(&x, taps);
    let my = filter_valid(&y, taps);
    let sxx = filter_valid(&(&x * &x), taps) - &mx * &mx;
    let syy = filter_valid(&(&y * &y), taps) - &my * &my;
    let sxy = filter_valid(&(&x * &y), taps) - &mx * &my;
    let num = (2.0 * &mx * &my + c1) * (2.0 * &sxy + c2);
    let den = (&mx * &mx + &my * &my + c1) * (sxx + syy + c2);
    (num / den).mean().expect("at least one window")
}

/// Gaussian-windowed SSIM averaged over valid windows and channels.
pub fn ssim(a: ArrayView3<'_, f32>, b: ArrayView3<'_, f32>) -> Result<f64> {
    same_shape(&a, &b)?;
    let (h, w, c) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW || c == 0 {
        return Err(Error::Metric(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let total: f64 = (0..c)
        .map(|ch| ssim_plane(a.index_axis(Axis(2), ch), b.index_axis(Axis(2), ch), &taps))
        .sum();
    Ok(total / c as f64)
}

/// Per-frame scores of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMetrics {
    pub clip_id: String,
    pub frame_times: Vec<f64>,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl ClipMetrics {
    pub fn mean_psnr(&self) -> f64 {
        mean(&self.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(&self.ssim)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clips: Vec<ClipMetrics>,
    /// Mean over frames, then over clips.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    clip_id: &'a str,
    frame_time: String,
    psnr: f64,
    ssim: f64,
}

impl MetricReport {
    pub fn from_clips(clips: Vec<ClipMetrics>) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::Metric("no clips to report".into()));
        }
        let mean_psnr = mean(&clips.iter().map(|c| c.mean_psnr()).collect::<Vec<_>>());
        let mean_ssim = mean(&clips.iter().map(|c| c.mean_ssim()).collect::<Vec<_>>());
        Ok(Self {
            clips,
            mean_psnr,
            mean_ssim,
        })
    }

    /// One row per frame; a final row with `clip_id = "mean"` and an empty
    /// time carries the aggregates.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for c in &self.clips {
            for ((t, p), s) in c.frame_times.iter().zip(&c.psnr).zip(&c.ssim) {
                w.serialize(CsvRow {
                    clip_id: &c.clip_id,
                    frame_time: t.to_string(),
                    psnr: *p,
                    ssim: *s,
                })?;
            }
        }
        w.serialize(CsvRow {
            clip_id: "mean",
            frame_time: String::new(),
            psnr: self.mean_psnr,
            ssim: self.mean_ssim,
        })?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Score aligned predicted and ground-truth clips (`L x H x W x C` each).
pub fn report(
    pred: &[Array4<f32>],
    gt: &[Array4<f32>],
    frame_times: &[Vec<f64>],
) -> Result<MetricReport> {
    if pred.is_empty() {
        return Err(Error::Metric("no clips to report".into()));
    }
    if pred.len() != gt.len() || pred.len() != frame_times.len() {
        return Err(Error::Metric(format!(
            "{} predictions, {} ground truths, {} time lists",
            pred.len(),
            gt.len(),
            frame_times.len()
        )));
    }
    let mut clips = Vec::with_capacity(pred.len());
    for (i, ((p, g), t)) in pred.iter().zip(gt).zip(frame_times).enumerate() {
        if p.dim() != g.dim() || t.len() != p.dim().0 || t.is_empty() {
            return Err(Error::Metric(format!(
                "clip {i}: prediction {:?}, ground truth {:?}, {} times",
                p.dim(),
                g.dim(),
                t.len()
            )));
        }
        let mut ps = Vec::with_capacity(t.len());
        let mut ss = Vec::with_capacity(t.len());
        for (x, y) in p.outer_iter().zip(g.outer_iter()) {
            ps.push(psnr(x, y, 1.0)?);
            ss.push(ssim(x, y)?);
        }
        clips.push(ClipMetrics {
            clip_id: format!("{i:05}"),
            frame_times: t.clone(),
            psnr: ps,
            ssim: ss,
        });
    }
    MetricReport::from_clips(clips)
}
