//! Task-level prediction: arbitrary context/target times, block-wise rollout
//! past the training window, and best-of-N sampling.

use std::path::{Path, PathBuf};

use candle_core::Tensor;
use log::info;
use ndarray::{concatenate, Array3, Array4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{frames_to_tensor, tensor_to_frames};
use crate::datagen::write_png;
use crate::error::{Error, Result};
use crate::metrics::Metric;
use crate::model::Npvp;
use crate::nn::standard_normal;
use crate::predictor::EventMode;

/// Desk-scale default for best-of-N evaluation.
pub const DEFAULT_NUM_SAMPLES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictMode {
    /// Event variable fixed to the prior mean; always one sample.
    Deterministic,
    /// Event variable drawn from the prior, one ChaCha stream per sample.
    Sample,
}

#[derive(Debug, Clone)]
pub struct PredictionRequest {
    /// `L_C x H x W x C`.
    pub context_frames: Array4<f32>,
    /// Raw window times of the context frames; need not be integers.
    pub context_times: Vec<f64>,
    pub target_times: Vec<f64>,
    pub mode: PredictMode,
    pub num_samples: usize,
    pub seed: u64,
}

impl PredictionRequest {
    pub fn deterministic(
        context_frames: Array4<f32>,
        context_times: Vec<f64>,
        target_times: Vec<f64>,
    ) -> Self {
        Self {
            context_frames,
            context_times,
            target_times,
            mode: PredictMode::Deterministic,
            num_samples: 1,
            seed: 0,
        }
    }

    pub fn sampled(
        context_frames: Array4<f32>,
        context_times: Vec<f64>,
        target_times: Vec<f64>,
        num_samples: usize,
        seed: u64,
    ) -> Self {
        Self {
            context_frames,
            context_times,
            target_times,
            mode: PredictMode::Sample,
            num_samples,
            seed,
        }
    }

    /// Samples actually drawn: deterministic mode always yields one.
    pub fn effective_samples(&self) -> usize {
        match self.mode {
            PredictMode::Deterministic => 1,
            PredictMode::Sample => self.num_samples,
        }
    }

    pub fn validate(&self, model: &Npvp) -> Result<()> {
        let cfg = model.config();
        let (l, h, w, c) = self.context_frames.dim();
        if l == 0 || self.context_times.is_empty() {
            return Err(Error::Request(
                "at least one context frame is required".into(),
            ));
        }
        if l != self.context_times.len() {
            return Err(Error::Request(format!(
                "{l} context frames but {} context times",
                self.context_times.len()
            )));
        }
        if self.target_times.is_empty() {
            return Err(Error::Request("target times are empty".into()));
        }
        if self.num_samples == 0 {
            return Err(Error::Request("num_samples must be at least 1".into()));
        }
        if (h, w, c) != (cfg.image_size, cfg.image_size, cfg.channels) {
            return Err(Error::GeometryMismatch {
                field: "image_size",
                expected: format!("{}x{}x{}", cfg.image_size, cfg.image_size, cfg.channels),
                found: format!("{h}x{w}x{c}"),
            });
        }
        let last = (cfg.window_len - 1) as f64;
        for &t in self.context_times.iter().chain(&self.target_times) {
            if !t.is_finite() || t < 0.0 || t > last {
                return Err(Error::Request(format!(
                    "time {t} lies outside the window [0, {last}]; use block-wise rollout"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PredictionResult {
    /// One `L_T x H x W x C` stack per sample.
    pub samples: Vec<Array4<f32>>,
    /// Event variable of each sample, `(H * W, D)`.
    pub events: Vec<Tensor>,
    pub target_times: Vec<f64>,
    pub mode: PredictMode,
    pub seed: u64,
}

impl PredictionResult {
    /// `N x L_T x H x W x C` as one flat vector with its shape.
    pub fn shape(&self) -> [usize; 5] {
        let (l, h, w, c) = self.samples[0].dim();
        [self.samples.len(), l, h, w, c]
    }
}

/// Event noise for sample `index` of a request seeded with `seed`.
pub fn sample_noise(model: &Npvp, seed: u64, index: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let cfg = model.config();
    standard_normal(
        &mut rng,
        &[1, cfg.tokens(), cfg.feature_dim],
        model.dtype(),
        model.device(),
    )
}

/// Encode the context, run the predictor once per sample and decode.
pub fn predict(model: &Npvp, req: &PredictionRequest) -> Result<PredictionResult> {
    req.validate(model)?;
    let n = req.effective_samples();
    let x = frames_to_tensor(&req.context_frames, model.dtype(), model.device())?;
    let y_c = model.encode_frames_detached(&x)?.unsqueeze(0)?;
    let y_c = y_c.repeat((n, 1, 1, 1))?;
    let mode = match req.mode {
        PredictMode::Deterministic => EventMode::Deterministic,
        PredictMode::Sample => {
            let eps = (0..n)
                .map(|i| sample_noise(model, req.seed, i as u64))
                .collect::<Result<Vec<_>>>()?;
            EventMode::Sample(Tensor::cat(&eps, 0)?)
        }
    };
    let out = model.forward(&req.context_times, &y_c, &req.target_times, &mode, None)?;
    let frames = tensor_to_frames(&model.decode_batch(&out.y_hat.detach())?)?;
    let l_t = req.target_times.len();
    let samples = (0..n)
        .map(|i| {
            frames
                .slice_axis(Axis(0), ndarray::Slice::from(i * l_t..(i + 1) * l_t))
                .mapv(|v| v.clamp(0.0, 1.0))
        })
        .collect();
    let events = (0..n)
        .map(|i| Ok(out.z.0.get(i)?.detach()))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionResult {
        samples,
        events,
        target_times: req.target_times.clone(),
        mode: req.mode,
        seed: req.seed,
    })
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// `horizon x H x W x C`.
    pub frames: Array4<f32>,
    pub blocks: usize,
}

/// Predict `horizon` future frames in blocks of `block_len`. Each block sees
/// the most recent `L_C` frames (ground truth first, then its own output) at
/// window times `0..L_C` and predicts times `L_C..L_C + block_len`.
pub fn rollout_vfp(
    model: &Npvp,
    context: &Array4<f32>,
    horizon: usize,
    block_len: usize,
    mode: PredictMode,
    seed: u64,
) -> Result<Rollout> {
    let l_c = context.dim().0;
    if horizon == 0 || block_len == 0 {
        return Err(Error::Request(
            "horizon and block_len must be positive".into(),
        ));
    }
    if l_c == 0 {
        return Err(Error::Request(
            "at least one context frame is required".into(),
        ));
    }
    if l_c + block_len > model.config().window_len {
        return Err(Error::Request(format!(
            "{l_c} context + {block_len} target frames exceed the window of {}",
            model.config().window_len
        )));
    }
    let context_times: Vec<f64> = (0..l_c).map(|i| i as f64).collect();
    let mut history = context.clone();
    let mut produced: Vec<Array4<f32>> = Vec::new();
    let mut done = 0;
    let mut blocks = 0;
    let total_blocks = horizon.div_ceil(block_len);
    while done < horizon {
        let len = block_len.min(horizon - done);
        let target_times = (l_c..l_c + len).map(|i| i as f64).collect();
        let start = history.dim().0 - l_c;
        let ctx = history
            .slice_axis(Axis(0), ndarray::Slice::from(start..))
            .to_owned();
        let req = PredictionRequest {
            context_frames: ctx,
            context_times: context_times.clone(),
            target_times,
            mode,
            num_samples: 1,
            seed: seed.wrapping_add(blocks as u64),
        };
        let block = predict(model, &req)?.samples.remove(0);
        blocks += 1;
        info!("rollout block {blocks}/{total_blocks}: {len} frames");
        history =
            concatenate(Axis(0), &[history.view(), block.view()]).expect("frames share a shape");
        produced.push(block);
        done += len;
    }
    let views: Vec<_> = produced.iter().map(|a| a.view()).collect();
    let frames = concatenate(Axis(0), &views).expect("frames share a shape");
    Ok(Rollout { frames, blocks })
}

#[derive(Debug, Clone)]
pub struct BestOfN {
    pub best_index: usize,
    pub best: Array4<f32>,
    /// Mean metric over target frames, per sample.
    pub scores: Vec<f64>,
}

impl BestOfN {
    pub fn best_score(&self) -> f64 {
        self.scores[self.best_index]
    }
}

/// Draw `req.num_samples` predictions and keep the one scoring highest
/// against `ground_truth`. Deterministic requests are repeated `N` times.
pub fn best_of_n(
    model: &Npvp,
    req: &PredictionRequest,
    ground_truth: &Array4<f32>,
    metric: Metric,
) -> Result<BestOfN> {
    if req.num_samples == 0 {
        return Err(Error::Request("num_samples must be at least 1".into()));
    }
    if ground_truth.dim().0 != req.target_times.len() {
        return Err(Error::Request(format!(
            "{} ground-truth frames for {} target times",
            ground_truth.dim().0,
            req.target_times.len()
        )));
    }
    let result = predict(model, req)?;
    let samples: Vec<Array4<f32>> = match req.mode {
        PredictMode::Sample => result.samples,
        PredictMode::Deterministic => vec![result.samples[0].clone(); req.num_samples],
    };
    let scores = samples
        .iter()
        .map(|s| metric.mean_over_frames(s, ground_truth))
        .collect::<Result<Vec<_>>>()?;
    let best_index = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best });
    Ok(BestOfN {
        best_index,
        best: samples[best_index].clone(),
        scores,
    })
}

/// JSON sidecar written next to prediction grids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionSidecar {
    pub context_times: Vec<f64>,
    pub target_times: Vec<f64>,
    pub mode: PredictMode,
    pub num_samples: usize,
    pub seed: u64,
    /// ChaCha stream used for each sample's event noise.
    pub sample_streams: Vec<u64>,
    pub grids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_scores: Option<Vec<f64>>,
}

/// Lay out `L x H x W x C` frames left to right with a 1-pixel gutter.
pub fn frame_strip(frames: &Array4<f32>) -> Array3<f32> {
    let (l, h, w, c) = frames.dim();
    let width = l * w + l.saturating_sub(1);
    let mut out = Array3::<f32>::ones((h, width, c));
    for (i, f) in frames.outer_iter().enumerate() {
        out.slice_mut(ndarray::s![.., i * (w + 1)..i * (w + 1) + w, ..])
            .assign(&f);
    }
    out
}

/// Stack strips vertically, one row per sample.
pub fn frame_grid(rows: &[Array4<f32>]) -> Array3<f32> {
    let strips: Vec<Array3<f32>> = rows.iter().map(frame_strip).collect();
    let (h, w, c) = strips[0].dim();
    let mut out = Array3::<f32>::ones((rows.len() * (h + 1) - 1, w, c));
    for (i, s) in strips.iter().enumerate() {
        out.slice_mut(ndarray::s![i * (h + 1)..i * (h + 1) + h, .., ..])
            .assign(s);
    }
    out
}

/// Write one PNG grid per sample plus `prediction.json` into `dir`.
pub fn write_prediction(
    dir: &Path,
    req: &PredictionRequest,
    result: &PredictionResult,
    scores: Option<(Metric, &[f64])>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut grids = Vec::new();
    for (i, s) in result.samples.iter().enumerate() {
        let name = format!("sample_{i:03}.png");
        write_png(&dir.join(&name), frame_strip(s).view())?;
        grids.push(name);
    }
    let all = frame_grid(&result.samples);
    write_png(&dir.join("grid.png"), all.view())?;
    grids.push("grid.png".into());
    let sidecar = PredictionSidecar {
        context_times: req.context_times.clone(),
        target_times: result.target_times.clone(),
        mode: result.mode,
        num_samples: result.samples.len(),
        seed: result.seed,
        sample_streams: match result.mode {
            PredictMode::Sample => (0..result.samples.len() as u64).collect(),
            PredictMode::Deterministic => Vec::new(),
        },
        grids,
        metric: scores.map(|(m, _)| m),
        sample_scores: scores.map(|(_, s)| s.to_vec()),
    };
    let path = dir.join("prediction.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(path)
}
