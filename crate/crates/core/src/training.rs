//! Two-stage training: the autoencoder alone, then the predictor over frozen
//! autoencoder features.
//!
//! All randomness in a step (batch clips, window offsets, flips, the task
//! split and the event noise) comes from a ChaCha stream keyed by
//! `(seed, step)`, so a run is a pure function of its config and data.

use std::path::Path;

use candle_core::{DType, Tensor};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::frames_to_tensor;
use crate::checkpoint::{save_checkpoint, Checkpoint, CheckpointMeta};
use crate::config::{ModelConfig, Phase, Stage, TrainConfig};
use crate::datagen::{split_clip, VideoClip};
use crate::error::{Error, Result};
use crate::losses::{compose_loss, gaussian_kl, l1, scalar};
use crate::model::{Npvp, AE_PREFIX, BASIS_VAR, COORD_PREFIX};
use crate::nn::standard_normal;
use crate::optim::{clip_gradients, AdamConfig, AdamW};
use crate::predictor::{
    EventMode, CONTEXT_EVENT_PREFIX, DECODER_PREFIX, ENCODER_PREFIX, TARGET_EVENT_PREFIX,
};

/// Parameter groups whose gradients are norm-clipped.
pub const CLIPPED_GROUPS: [&str; 2] = [ENCODER_PREFIX, DECODER_PREFIX];

/// Cosine annealing with warm restarts every `restart_period` epochs.
pub fn lr_at(step: u64, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let period = (cfg.restart_period * steps_per_epoch.max(1)) as u64;
    let tau = (step % period) as f64 / period as f64;
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * tau).cos())
}

/// The RNG for one training step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Position of a ChaCha stream, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Serialized as a string; JSON numbers cannot hold a `u128`.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

impl RngState {
    pub fn at_step(seed: u64, step: u64) -> Self {
        Self {
            seed,
            stream: step,
            word_pos: 0,
        }
    }

    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = step_rng(self.seed, self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub pixel_l1: f64,
    pub feature_l1: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn write_history_csv(path: &Path, rows: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn check_frames(cfg: &ModelConfig, clips: &[VideoClip]) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for clip in clips {
        let (h, w, c) = clip.frame_shape();
        if h != cfg.image_size || w != cfg.image_size {
            return Err(Error::GeometryMismatch {
                field: "image_size",
                expected: cfg.image_size.to_string(),
                found: format!("{h}x{w}"),
            });
        }
        if c != cfg.channels {
            return Err(Error::GeometryMismatch {
                field: "channels",
                expected: cfg.channels.to_string(),
                found: c.to_string(),
            });
        }
    }
    Ok(())
}

/// Flip variants used for augmentation: none, horizontal, vertical, both.
fn flip_variants(augment: bool) -> &'static [(bool, bool)] {
    if augment {
        &[(false, false), (true, false), (false, true), (true, true)]
    } else {
        &[(false, false)]
    }
}

fn backward_and_step(opt: &mut AdamW, loss: &Tensor, lr: f64, clip: Option<f64>) -> Result<()> {
    let store = loss.backward()?;
    let mut grads = opt.collect_grads(&store);
    if let Some(max_norm) = clip {
        clip_gradients(&mut grads, &CLIPPED_GROUPS, max_norm)?;
    }
    opt.step(&grads, lr)
}

/// Autoencoder stage: per-frame L1 reconstruction with constant-rate Adam.
pub struct AutoencoderTrainer {
    model: Npvp,
    opt: AdamW,
    cfg: TrainConfig,
    /// Every training frame (and its flips), `(F, C, I, I)`.
    pool: Tensor,
    step: u64,
    total_steps: u64,
    steps_per_epoch: usize,
    history: Vec<StepRecord>,
}

impl AutoencoderTrainer {
    pub fn new(model: Npvp, clips: &[VideoClip], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_frames(model.config(), clips)?;
        let mut parts = Vec::new();
        for &(h, v) in flip_variants(cfg.augment_flips) {
            for clip in clips {
                let c = clip.flipped(h, v);
                parts.push(frames_to_tensor(c.frames(), model.dtype(), model.device())?);
            }
        }
        let pool = Tensor::cat(&parts, 0)?;
        let frames: usize = clips.iter().map(|c| c.len()).sum();
        let steps_per_epoch = frames.div_ceil(cfg.ae_batch_size).max(1);
        let total_steps = cfg.max_steps.unwrap_or(cfg.epochs * steps_per_epoch) as u64;
        let params = model
            .var_store()
            .with_prefixes(&[AE_PREFIX])
            .into_iter()
            .map(|(n, v)| (n, v, 0.0))
            .collect();
        let opt = AdamW::new(params, AdamConfig::default())?;
        Ok(Self {
            model,
            opt,
            cfg,
            pool,
            step: 0,
            total_steps,
            steps_per_epoch,
            history: Vec::new(),
        })
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn model(&self) -> &Npvp {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.opt
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn into_model(self) -> Npvp {
        self.model
    }

    pub fn train_step(&mut self) -> Result<StepRecord> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let n = self.pool.dim(0)?;
        let idx: Vec<u32> = (0..self.cfg.ae_batch_size)
            .map(|_| rng.gen_range(0..n) as u32)
            .collect();
        let idx = Tensor::new(idx.as_slice(), self.model.device())?;
        let x = self.pool.index_select(&idx, 0)?;
        let ae = &self.model.autoencoder;
        let recon = ae.decode(&ae.encode(&x)?)?;
        let loss = l1(&recon, &x)?;
        let lr = self.cfg.ae_lr;
        backward_and_step(&mut self.opt, &loss, lr, None)?;
        let v = scalar(&loss)?;
        let rec = StepRecord {
            step: self.step,
            lr,
            pixel_l1: v,
            feature_l1: 0.0,
            kl: 0.0,
            total: v,
        };
        self.step += 1;
        self.history.push(rec);
        log_epoch(
            &self.history,
            self.step,
            self.steps_per_epoch,
            "autoencoder",
        );
        Ok(rec)
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step < self.total_steps {
            self.train_step()?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            stage: Stage::Autoencoder,
            train: Some(self.cfg.clone()),
            step: self.step,
            rng: RngState::at_step(self.cfg.seed, self.step),
        };
        save_checkpoint(path, &self.model, Some(&self.opt), &meta)
    }

    /// Mean per-frame L1 over `clips` with the current weights.
    pub fn evaluate(&self, clips: &[VideoClip]) -> Result<f64> {
        reconstruction_l1(&self.model, clips)
    }
}

/// Mean absolute reconstruction error of the autoencoder over every frame.
pub fn reconstruction_l1(model: &Npvp, clips: &[VideoClip]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for clip in clips {
        let x = frames_to_tensor(clip.frames(), model.dtype(), model.device())?;
        for chunk in chunks(&x, 32)? {
            let recon = model
                .autoencoder
                .decode(&model.autoencoder.encode(&chunk)?)?;
            let n = chunk.elem_count();
            sum += scalar(&l1(&recon.detach(), &chunk)?)? * n as f64;
            count += n;
        }
    }
    Ok(sum / count as f64)
}

fn chunks(x: &Tensor, size: usize) -> Result<Vec<Tensor>> {
    let n = x.dim(0)?;
    (0..n)
        .step_by(size)
        .map(|s| Ok(x.narrow(0, s, size.min(n - s))?))
        .collect()
}

fn log_epoch(history: &[StepRecord], step: u64, steps_per_epoch: usize, stage: &str) {
    if step.is_multiple_of(steps_per_epoch as u64) {
        let epoch = step / steps_per_epoch as u64;
        let tail = &history[history.len().saturating_sub(steps_per_epoch)..];
        let mean = tail.iter().map(|r| r.total).sum::<f64>() / tail.len().max(1) as f64;
        info!("{stage} epoch {epoch} step {step}: mean loss {mean:.6}");
    }
}

/// Train the autoencoder from scratch with weights drawn from `cfg.seed`.
pub fn train_autoencoder(
    clips: &[VideoClip],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<AutoencoderTrainer> {
    if cfg.stage != Stage::Autoencoder {
        return Err(Error::Config(
            "train_autoencoder needs stage = autoencoder".into(),
        ));
    }
    let model = Npvp::new(model_cfg.clone(), DType::F32, cfg.seed)?;
    let mut t = AutoencoderTrainer::new(model, clips, cfg.clone())?;
    t.run()?;
    Ok(t)
}

/// Precomputed features and frames of one clip variant.
struct BankEntry {
    /// `(L, N, D)`.
    features: Tensor,
    /// `(L, C, I, I)`.
    frames: Tensor,
}

/// Parameters the predictor stage optimizes: everything but the autoencoder
/// and the Fourier projection.
pub fn predictor_parameters(
    model: &Npvp,
    weight_decay: f64,
) -> Vec<(String, candle_core::Var, f64)> {
    model
        .var_store()
        .with_prefixes(&[
            COORD_PREFIX,
            ENCODER_PREFIX,
            DECODER_PREFIX,
            CONTEXT_EVENT_PREFIX,
            TARGET_EVENT_PREFIX,
        ])
        .into_iter()
        .filter(|(n, _)| n != BASIS_VAR)
        .map(|(n, v)| {
            let wd = if n.ends_with(".weight") {
                weight_decay
            } else {
                0.0
            };
            (n, v, wd)
        })
        .collect()
}

/// Predictor stage over frozen autoencoder features.
pub struct PredictorTrainer {
    model: Npvp,
    opt: AdamW,
    cfg: TrainConfig,
    bank: Vec<Vec<BankEntry>>,
    step: u64,
    total_steps: u64,
    steps_per_epoch: usize,
    deterministic_steps: u64,
    history: Vec<StepRecord>,
}

impl PredictorTrainer {
    /// `model` must already hold the trained autoencoder weights.
    pub fn new(model: Npvp, clips: &[VideoClip], cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        check_frames(model.config(), clips)?;
        if cfg.clip_len > model.config().window_len {
            return Err(Error::Config(format!(
                "clip_len {} exceeds the model window {}",
                cfg.clip_len,
                model.config().window_len
            )));
        }
        let usable: Vec<&VideoClip> = clips.iter().filter(|c| c.len() >= cfg.clip_len).collect();
        if usable.is_empty() {
            return Err(Error::Config(format!(
                "no clip has at least {} frames",
                cfg.clip_len
            )));
        }
        let mut bank = Vec::with_capacity(usable.len());
        for clip in &usable {
            let mut variants = Vec::new();
            for &(h, v) in flip_variants(cfg.augment_flips) {
                let c = clip.flipped(h, v);
                let frames = frames_to_tensor(c.frames(), model.dtype(), model.device())?;
                let feats = chunks(&frames, 32)?
                    .iter()
                    .map(|x| model.encode_frames_detached(x))
                    .collect::<Result<Vec<_>>>()?;
                variants.push(BankEntry {
                    features: Tensor::cat(&feats, 0)?,
                    frames,
                });
            }
            bank.push(variants);
        }
        let steps_per_epoch = usable.len().div_ceil(cfg.batch_size).max(1);
        let total_steps = cfg.max_steps.unwrap_or(cfg.epochs * steps_per_epoch) as u64;
        let deterministic_steps = match cfg.phase {
            Phase::Deterministic => total_steps,
            Phase::Stochastic => (total_steps as f64 * cfg.deterministic_fraction).round() as u64,
        };
        let opt = AdamW::new(
            predictor_parameters(&model, cfg.weight_decay),
            AdamConfig::default(),
        )?;
        Ok(Self {
            model,
            opt,
            cfg,
            bank,
            step: 0,
            total_steps,
            steps_per_epoch,
            deterministic_steps,
            history: Vec::new(),
        })
    }

    /// Continue a run saved with [`PredictorTrainer::save`].
    pub fn resume(ckpt: Checkpoint, clips: &[VideoClip], cfg: TrainConfig) -> Result<Self> {
        let step = ckpt.header.step;
        let mut t = Self::new(ckpt.model, clips, cfg)?;
        t.opt.import_state(ckpt.optimizer)?;
        t.step = step;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            stage: Stage::Predictor,
            train: Some(self.cfg.clone()),
            step: self.step,
            rng: self.rng_state(),
        };
        save_checkpoint(path, &self.model, Some(&self.opt), &meta)
    }

    pub fn model(&self) -> &Npvp {
        &self.model
    }

    pub fn into_model(self) -> Npvp {
        self.model
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.opt
    }

    pub fn optimizer_mut(&mut self) -> &mut AdamW {
        &mut self.opt
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn history(&self) -> &[StepRecord] {
        &self.history
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Continue from `step` (after restoring weights and optimizer state).
    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn deterministic_steps(&self) -> u64 {
        self.deterministic_steps
    }

    pub fn phase_at(&self, step: u64) -> Phase {
        if step < self.deterministic_steps {
            Phase::Deterministic
        } else {
            Phase::Stochastic
        }
    }

    pub fn rng_state(&self) -> RngState {
        RngState::at_step(self.cfg.seed, self.step)
    }

    pub fn train_step(&mut self) -> Result<StepRecord> {
        let phase = self.phase_at(self.step);
        let mut rng = step_rng(self.cfg.seed, self.step);
        let clip_len = self.cfg.clip_len;
        let split = split_clip(clip_len, &self.cfg.split_policy, rng.gen())?;
        let b = self.cfg.batch_size;
        let device = self.model.device().clone();
        let mut y_c = Vec::with_capacity(b);
        let mut y_t = Vec::with_capacity(b);
        let mut x_t = Vec::with_capacity(b);
        for _ in 0..b {
            let clip = &self.bank[rng.gen_range(0..self.bank.len())];
            let entry = &clip[rng.gen_range(0..clip.len())];
            let len = entry.features.dim(0)?;
            let start = rng.gen_range(0..=len - clip_len);
            let pick = |idx: &[usize]| -> Result<Tensor> {
                let v: Vec<u32> = idx.iter().map(|&i| (start + i) as u32).collect();
                Ok(Tensor::new(v.as_slice(), &device)?)
            };
            let ci = pick(&split.context_idx)?;
            let ti = pick(&split.target_idx)?;
            y_c.push(entry.features.index_select(&ci, 0)?);
            y_t.push(entry.features.index_select(&ti, 0)?);
            x_t.push(entry.frames.index_select(&ti, 0)?);
        }
        let y_c = Tensor::stack(&y_c, 0)?;
        let y_t = Tensor::stack(&y_t, 0)?;
        let target_frames = Tensor::cat(&x_t, 0)?;
        let context_times: Vec<f64> = split.context_idx.iter().map(|&i| i as f64).collect();
        let target_times: Vec<f64> = split.target_idx.iter().map(|&i| i as f64).collect();

        let (mode, posterior_input) = match phase {
            Phase::Deterministic => (EventMode::Deterministic, None),
            Phase::Stochastic => {
                let (_, _, n, d) = y_t.dims4()?;
                let eps = standard_normal(&mut rng, &[b, n, d], self.model.dtype(), &device)?;
                (EventMode::Sample(eps), Some(&y_t))
            }
        };
        let out =
            self.model
                .forward(&context_times, &y_c, &target_times, &mode, posterior_input)?;
        let feature = l1(&out.y_hat, &y_t)?;
        let pixel = l1(&self.model.decode_batch(&out.y_hat)?, &target_frames)?;
        let kl = match &out.posterior {
            Some(q) => Some(gaussian_kl(q, &out.prior)?),
            None => None,
        };
        let beta = self.cfg.effective_beta(phase);
        let (loss, parts) = compose_loss(&pixel, &feature, kl.as_ref(), self.cfg.gamma, beta)?;
        let lr = lr_at(self.step, self.steps_per_epoch, &self.cfg);
        backward_and_step(&mut self.opt, &loss, lr, Some(self.cfg.clip_norm))?;
        let rec = StepRecord {
            step: self.step,
            lr,
            pixel_l1: parts.pixel,
            feature_l1: parts.feature,
            kl: parts.kl,
            total: parts.total,
        };
        self.step += 1;
        self.history.push(rec);
        log_epoch(&self.history, self.step, self.steps_per_epoch, "predictor");
        Ok(rec)
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step < self.total_steps {
            self.train_step()?;
        }
        Ok(())
    }
}

/// Build a predictor on top of the autoencoder in `ae` and train it.
pub fn train_predictor(
    clips: &[VideoClip],
    ae: &Npvp,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<PredictorTrainer> {
    if cfg.stage != Stage::Predictor {
        return Err(Error::Config(
            "train_predictor needs stage = predictor".into(),
        ));
    }
    model_cfg.check_autoencoder_compatible(ae.config())?;
    let model = Npvp::new(model_cfg.clone(), DType::F32, cfg.seed)?;
    model.copy_from(ae, &[AE_PREFIX])?;
    let mut t = PredictorTrainer::new(model, clips, cfg.clone())?;
    t.run()?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::SplitSpec;

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::full(Stage::Predictor);
        let spe = 10;
        assert_eq!(lr_at(0, spe, &cfg), 1e-4);
        let half = lr_at(750, spe, &cfg);
        let mid = (cfg.lr_max + cfg.lr_min) / 2.0;
        assert!((half - mid).abs() < 1e-18, "{half}");
        assert!((half - 5.005e-5).abs() < 1e-15);
        let end = lr_at(1499, spe, &cfg);
        assert!(end > cfg.lr_min && end - cfg.lr_min < 1e-9);
        assert_eq!(lr_at(1500, spe, &cfg), 1e-4);
    }

    #[test]
    fn schedule_is_monotone_within_period() {
        let cfg = TrainConfig::toy(Stage::Predictor);
        let period = (cfg.restart_period * 3) as u64;
        let mut prev = f64::INFINITY;
        for s in 0..period {
            let lr = lr_at(s, 3, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
        assert!(lr_at(period, 3, &cfg) > lr_at(period - 1, 3, &cfg));
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = step_rng(7, 3);
        let _: u64 = rng.gen();
        let s = RngState::capture(7, &rng);
        let json = serde_json::to_string(&s).unwrap();
        let back: RngState = serde_json::from_str(&json).unwrap();
        let mut r2 = back.restore();
        assert_eq!(rng.gen::<u64>(), r2.gen::<u64>());
    }

    #[test]
    fn weight_decay_only_on_weights() {
        let model = Npvp::new(ModelConfig::toy(), DType::F32, 0).unwrap();
        let params = predictor_parameters(&model, 1e-4);
        assert!(params
            .iter()
            .all(|(n, _, _)| n != BASIS_VAR && !n.starts_with(AE_PREFIX)));
        for (n, _, wd) in &params {
            if n.ends_with(".bias") || n.contains("norm") {
                assert_eq!(*wd, 0.0, "{n}");
            }
        }
        assert!(params.iter().any(|(_, _, wd)| *wd > 0.0));
    }

    #[test]
    fn stage_checked() {
        let cfg = TrainConfig {
            split_policy: SplitSpec::Vfp {
                context: 2,
                targets: 2,
            },
            ..TrainConfig::toy(Stage::Predictor)
        };
        assert!(train_autoencoder(&[], &ModelConfig::toy(), &cfg).is_err());
    }
}
