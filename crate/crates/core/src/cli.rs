//! Command-line front end: `gen-data`, `train`, `predict`, `eval`.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or config
//! errors. Flags override config-file values, which override the preset.
//! Everything is validated before the output directory is touched.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, load_checkpoint_for, read_checkpoint};
use crate::config::{ModelConfig, Phase, Stage, TrainConfig};
use crate::datagen::{
    gen_moving_shapes, load_dataset, split_clip, ShapesConfig, SplitSpec, VideoClip,
};
use crate::error::Error;
use crate::inference::{best_of_n, predict, write_prediction, PredictMode, PredictionRequest};
use crate::metrics::{psnr, ssim, ClipMetrics, Metric, MetricReport};
use crate::model::{Npvp, AE_PREFIX};
use crate::training::{write_history_csv, AutoencoderTrainer, PredictorTrainer};

pub const OUT_ENV: &str = "NPVP_OUT";

#[derive(Debug, Parser)]
#[command(name = "npvp", version, about = "Neural-process video prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a bouncing-shapes dataset to PNG folders.
    GenData(GenDataArgs),
    /// Train the autoencoder or the predictor.
    Train(TrainArgs),
    /// Predict frames for one clip and write PNG grids plus a JSON sidecar.
    Predict(PredictArgs),
    /// Best-of-N evaluation over a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    pub clips: usize,
    #[arg(long, default_value_t = 20)]
    pub len: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub shapes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; defaults to $NPVP_OUT.
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Ae,
    Predictor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Toy,
    Full,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub stage: StageArg,
    /// JSON run config (see `RunConfig`).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, env = OUT_ENV)]
    pub out: Option<PathBuf>,
    /// Autoencoder checkpoint; required for the predictor stage.
    #[arg(long)]
    pub ae_ckpt: Option<PathBuf>,
    /// Continue a predictor run from its checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub phase: Option<PhaseArg>,
    /// Validate the configuration and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Vfp,
    Vfi,
    Vpe,
    Vrc,
    Custom,
}

#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long, value_enum, default_value = "vfi")]
    pub task: TaskArg,
    /// VFI past frames.
    #[arg(long)]
    pub p: Option<usize>,
    /// VFI future frames.
    #[arg(long)]
    pub f: Option<usize>,
    /// VFI frames to fill in.
    #[arg(long)]
    pub k: Option<usize>,
    /// Context frames for VFP, VPE and VRC.
    #[arg(long)]
    pub context: Option<usize>,
    /// Target frames for VFP and VPE.
    #[arg(long)]
    pub targets: Option<usize>,
    /// Custom context times (integers index clip frames). Defaults to every
    /// frame of the window that is not a target time.
    #[arg(long, value_delimiter = ',')]
    pub context_times: Vec<f64>,
    /// Custom target times, real-valued.
    #[arg(long, value_delimiter = ',')]
    pub target_times: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Clip index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub clip: usize,
    /// First frame of the window inside the clip.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Number of stochastic samples.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Use the prior mean instead of sampling.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "psnr")]
    pub metric: Metric,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Metric used to rank best-of-N samples.
    #[arg(long, default_value = "psnr")]
    pub metric: Metric,
    /// Evaluate at most this many clips.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, env = OUT_ENV)]
    pub out: PathBuf,
}

/// JSON run configuration. Sections are merged over the chosen preset, so a
/// file may name only the fields it changes; unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub model: Option<serde_json::Value>,
    #[serde(default)]
    pub train: Option<serde_json::Value>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub ae_ckpt: Option<PathBuf>,
}

/// A failure mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSplit(_) | Error::Request(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

pub fn cmd_gen_data(a: &GenDataArgs) -> CliResult<()> {
    let cfg = ShapesConfig {
        num_clips: a.clips,
        len: a.len,
        size: a.size,
        num_shapes: a.shapes,
        seed: a.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    gen_moving_shapes(&cfg, &a.out)?;
    let manifest = a.out.join(crate::datagen::MANIFEST_FILE);
    println!("{}", manifest.display());
    Ok(())
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(
    base: &T,
    patch: Option<&serde_json::Value>,
    what: &str,
) -> CliResult<T> {
    let mut v = serde_json::to_value(base).map_err(Error::from)?;
    if let Some(p) = patch {
        if !p.is_object() {
            return Err(usage(format!("`{what}` must be a JSON object")));
        }
        merge(&mut v, p);
    }
    serde_json::from_value(v).map_err(|e| usage(format!("invalid `{what}` section: {e}")))
}

/// Fully resolved training setup.
#[derive(Debug, Clone)]
pub struct ResolvedTrain {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: PathBuf,
    pub out: PathBuf,
    pub ae_ckpt: Option<PathBuf>,
}

pub fn resolve_train(a: &TrainArgs) -> CliResult<ResolvedTrain> {
    let run: RunConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    let stage = match a.stage {
        StageArg::Ae => Stage::Autoencoder,
        StageArg::Predictor => Stage::Predictor,
    };
    let preset = match (a.preset, run.preset.as_deref()) {
        (Some(p), _) => p,
        (None, None) | (None, Some("toy")) => PresetArg::Toy,
        (None, Some("full")) => PresetArg::Full,
        (None, Some(other)) => return Err(usage(format!("unknown preset {other:?}"))),
    };
    let (model_base, train_base) = match preset {
        PresetArg::Toy => (ModelConfig::toy(), TrainConfig::toy(stage)),
        PresetArg::Full => (ModelConfig::full_64(), TrainConfig::full(stage)),
    };
    let model: ModelConfig = overlay(&model_base, run.model.as_ref(), "model")?;
    let mut train: TrainConfig = overlay(&train_base, run.train.as_ref(), "train")?;
    train.stage = stage;
    if let Some(s) = a.steps {
        train.max_steps = Some(s);
    }
    if let Some(e) = a.epochs {
        train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(s) = a.seed {
        train.seed = s;
    }
    if let Some(p) = a.phase {
        train.phase = match p {
            PhaseArg::Deterministic => Phase::Deterministic,
            PhaseArg::Stochastic => Phase::Stochastic,
        };
    }
    model.validate()?;
    train.validate()?;
    if train.clip_len > model.window_len {
        return Err(usage(format!(
            "clip_len {} exceeds window_len {}",
            train.clip_len, model.window_len
        )));
    }
    let data = a
        .data
        .clone()
        .or(run.data)
        .ok_or_else(|| usage("no dataset given (--data or `data` in the config)"))?;
    let out = a
        .out
        .clone()
        .or(run.out)
        .ok_or_else(|| usage(format!("no output directory (--out, ${OUT_ENV} or `out`)")))?;
    let ae_ckpt = a.ae_ckpt.clone().or(run.ae_ckpt);
    if stage == Stage::Predictor && ae_ckpt.is_none() && a.resume.is_none() {
        return Err(usage("the predictor stage requires --ae-ckpt"));
    }
    Ok(ResolvedTrain {
        model,
        train,
        data,
        out,
        ae_ckpt,
    })
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let r = resolve_train(a)?;
    if a.dry_run {
        println!(
            "{}",
            serde_json::to_string_pretty(&serde_json::json!({
                "model": r.model,
                "train": r.train,
                "data": r.data,
                "out": r.out,
                "ae_ckpt": r.ae_ckpt,
            }))
            .map_err(Error::from)?
        );
        return Ok(());
    }
    let dataset = load_dataset(&r.data)?;
    match r.train.stage {
        Stage::Autoencoder => {
            let model = Npvp::new(r.model.clone(), DType::F32, r.train.seed)?;
            let mut t = AutoencoderTrainer::new(model, &dataset.clips, r.train.clone())?;
            std::fs::create_dir_all(&r.out).map_err(Error::from)?;
            t.run()?;
            let path = r.out.join("ae.ckpt");
            t.save(&path)?;
            write_history_csv(&r.out.join("ae_metrics.csv"), t.history())?;
            println!("{}", path.display());
        }
        Stage::Predictor => {
            let mut t = match &a.resume {
                Some(p) => {
                    let ck = load_checkpoint_for(p, &r.model)?;
                    PredictorTrainer::resume(ck, &dataset.clips, r.train.clone())?
                }
                None => {
                    let ae_path = r.ae_ckpt.as_ref().expect("checked in resolve_train");
                    let ae = load_checkpoint(ae_path)?;
                    r.model.check_autoencoder_compatible(&ae.header.model)?;
                    let model = Npvp::new(r.model.clone(), DType::F32, r.train.seed)?;
                    model.copy_from(&ae.model, &[AE_PREFIX])?;
                    PredictorTrainer::new(model, &dataset.clips, r.train.clone())?
                }
            };
            std::fs::create_dir_all(&r.out).map_err(Error::from)?;
            t.run()?;
            let path = r.out.join("predictor.ckpt");
            t.save(&path)?;
            write_history_csv(&r.out.join("predictor_metrics.csv"), t.history())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Context and target times (window-relative) for one task instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTimes {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
}

impl TaskTimes {
    /// Window span the times need from a clip.
    pub fn span(&self) -> usize {
        self.context
            .iter()
            .chain(&self.target)
            .fold(0.0f64, |m, &t| m.max(t))
            .floor() as usize
            + 1
    }
}

fn as_times(idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| i as f64).collect()
}

/// Resolve task flags into times; `seed` drives VRC draws.
pub fn task_times(t: &TaskArgs, window: usize, seed: u64) -> CliResult<TaskTimes> {
    let spec = match t.task {
        TaskArg::Vfi => SplitSpec::Vfi {
            past: t.p.unwrap_or(5),
            future: t.f.unwrap_or(5),
            targets: t.k.unwrap_or(10),
        },
        TaskArg::Vfp => {
            let context = t.context.unwrap_or(window / 2);
            SplitSpec::Vfp {
                context,
                targets: t.targets.unwrap_or(window.saturating_sub(context)),
            }
        }
        TaskArg::Vpe => {
            let context = t.context.unwrap_or(window / 2);
            SplitSpec::Vpe {
                targets: t.targets.unwrap_or(window.saturating_sub(context)),
                context,
            }
        }
        TaskArg::Vrc => {
            let n = t.context.unwrap_or(window / 2);
            SplitSpec::Vrc {
                min_context: n,
                max_context: n,
            }
        }
        TaskArg::Custom => {
            if t.target_times.is_empty() {
                return Err(usage("--task custom needs --target-times"));
            }
            let last = (window - 1) as f64;
            let context = if t.context_times.is_empty() {
                (0..window)
                    .map(|i| i as f64)
                    .filter(|c| !t.target_times.contains(c))
                    .collect()
            } else {
                t.context_times.clone()
            };
            for &c in &context {
                if c.fract() != 0.0 || c < 0.0 || c > last {
                    return Err(usage(format!(
                        "context time {c} must be a frame index in [0, {last}]"
                    )));
                }
            }
            for &x in &t.target_times {
                if !(0.0..=last).contains(&x) {
                    return Err(usage(format!("target time {x} lies outside [0, {last}]")));
                }
            }
            return Ok(TaskTimes {
                context,
                target: t.target_times.clone(),
            });
        }
    };
    spec.validate(window).map_err(|e| usage(e.to_string()))?;
    let split = split_clip(window, &spec, seed).map_err(|e| usage(e.to_string()))?;
    Ok(TaskTimes {
        context: as_times(&split.context_idx),
        target: as_times(&split.target_idx),
    })
}

fn sample_mode(samples: Option<usize>, deterministic: bool) -> CliResult<(PredictMode, usize)> {
    match (samples, deterministic) {
        (Some(n), true) if n > 1 => {
            Err(usage("--samples and --deterministic contradict each other"))
        }
        (Some(0), _) => Err(usage("--samples must be at least 1")),
        (_, true) | (None, false) => Ok((PredictMode::Deterministic, 1)),
        (Some(n), false) => Ok((PredictMode::Sample, n)),
    }
}

/// Frames of `clip` at integer window times, offset by `start`.
fn frames_at(clip: &VideoClip, start: usize, times: &[f64]) -> Option<ndarray::Array4<f32>> {
    let idx: Option<Vec<usize>> = times
        .iter()
        .map(|&t| {
            let i = start + t as usize;
            (t.fract() == 0.0 && i < clip.len()).then_some(i)
        })
        .collect();
    idx.map(|i| clip.select(&i))
}

fn checkpoint_window(path: &Path) -> CliResult<usize> {
    let (header, _) = read_checkpoint(path)?;
    Ok(header.model.window_len)
}

pub fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let (mode, n) = sample_mode(a.samples, a.deterministic)?;
    let window = checkpoint_window(&a.ckpt)?;
    let times = task_times(&a.task, window, a.seed)?;
    let ck = load_checkpoint(&a.ckpt)?;
    let dataset = load_dataset(&a.data)?;
    let clip = dataset.clips.get(a.clip).ok_or_else(|| {
        usage(format!(
            "clip {} not in dataset of {}",
            a.clip,
            dataset.clips.len()
        ))
    })?;
    if a.start + times.span() > clip.len() {
        return Err(usage(format!(
            "window of {} frames at {} exceeds clip length {}",
            times.span(),
            a.start,
            clip.len()
        )));
    }
    let context = frames_at(clip, a.start, &times.context).expect("validated integer times");
    let req = PredictionRequest {
        context_frames: context,
        context_times: times.context.clone(),
        target_times: times.target.clone(),
        mode,
        num_samples: n,
        seed: a.seed,
    };
    req.validate(&ck.model)?;
    let result = predict(&ck.model, &req)?;
    let scores = match frames_at(clip, a.start, &times.target) {
        Some(gt) => Some(
            result
                .samples
                .iter()
                .map(|s| a.metric.mean_over_frames(s, &gt))
                .collect::<crate::Result<Vec<f64>>>()?,
        ),
        None => None,
    };
    let path = write_prediction(
        &a.out,
        &req,
        &result,
        scores.as_deref().map(|s| (a.metric, s)),
    )?;
    info!(
        "wrote {} sample(s) of {} frames",
        result.samples.len(),
        times.target.len()
    );
    println!("{}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    clip_id: String,
    psnr: f64,
    ssim: f64,
    best_sample: String,
}

pub fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let (mode, n) = sample_mode(a.samples, a.deterministic)?;
    let window = checkpoint_window(&a.ckpt)?;
    task_times(&a.task, window, a.seed)?;
    let ck = load_checkpoint(&a.ckpt)?;
    let dataset = load_dataset(&a.data)?;
    let limit = a.limit.unwrap_or(usize::MAX);
    let mut per_clip = Vec::new();
    let mut rows = Vec::new();
    for (i, clip) in dataset.clips.iter().enumerate().take(limit) {
        let times = task_times(&a.task, window, a.seed.wrapping_add(i as u64))?;
        if times.span() > clip.len() {
            continue;
        }
        let context = frames_at(clip, 0, &times.context).expect("integer times");
        let Some(gt) = frames_at(clip, 0, &times.target) else {
            return Err(usage("evaluation targets must be frame indices"));
        };
        let req = PredictionRequest {
            context_frames: context,
            context_times: times.context.clone(),
            target_times: times.target.clone(),
            mode,
            num_samples: n,
            seed: a.seed.wrapping_add(i as u64),
        };
        let best = best_of_n(&ck.model, &req, &gt, a.metric)?;
        let mut ps = Vec::new();
        let mut ss = Vec::new();
        for (p, g) in best.best.outer_iter().zip(gt.outer_iter()) {
            ps.push(psnr(p, g, 1.0)?);
            ss.push(ssim(p, g)?);
        }
        let m = ClipMetrics {
            clip_id: format!("{i:05}"),
            frame_times: times.target.clone(),
            psnr: ps,
            ssim: ss,
        };
        rows.push(EvalRow {
            clip_id: m.clip_id.clone(),
            psnr: m.mean_psnr(),
            ssim: m.mean_ssim(),
            best_sample: best.best_index.to_string(),
        });
        per_clip.push(m);
    }
    if per_clip.is_empty() {
        return Err(CliError::Runtime(Error::Metric(
            "no clip in the evaluation set is long enough for the task".into(),
        )));
    }
    let report = MetricReport::from_clips(per_clip)?;
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let mut w = csv::Writer::from_path(a.out.join("eval.csv")).map_err(Error::from)?;
    for r in &rows {
        w.serialize(r).map_err(Error::from)?;
    }
    w.serialize(EvalRow {
        clip_id: "mean".into(),
        psnr: report.mean_psnr,
        ssim: report.mean_ssim,
        best_sample: String::new(),
    })
    .map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    report.write_csv(&a.out.join("frames.csv"))?;
    report.write_json(&a.out.join("eval.json"))?;
    println!("clips  {:>6}", rows.len());
    println!("psnr   {:>9.4}", report.mean_psnr);
    println!("ssim   {:>9.4}", report.mean_ssim);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(args: &[&str]) -> TaskArgs {
        #[derive(Parser)]
        struct W {
            #[command(flatten)]
            t: TaskArgs,
        }
        let mut v = vec!["w"];
        v.extend_from_slice(args);
        W::try_parse_from(v).unwrap().t
    }

    #[test]
    fn vfi_times() {
        let t = task_times(
            &task(&["--task", "vfi", "--p", "5", "--f", "5", "--k", "10"]),
            20,
            0,
        )
        .unwrap();
        assert_eq!(t.target, as_times(&(5..15).collect::<Vec<_>>()));
        assert_eq!(t.context.len(), 10);
        assert_eq!(t.span(), 20);
    }

    #[test]
    fn custom_times_default_context() {
        let t = task_times(
            &task(&["--task", "custom", "--target-times", "4.25,4.5,8.5"]),
            20,
            0,
        )
        .unwrap();
        assert_eq!(t.target, vec![4.25, 4.5, 8.5]);
        assert_eq!(t.context.len(), 20);
        assert!(task_times(&task(&["--task", "custom"]), 20, 0).is_err());
        assert!(task_times(&task(&["--task", "custom", "--target-times", "25"]), 20, 0).is_err());
    }

    #[test]
    fn contradictory_sampling_flags() {
        assert!(matches!(
            sample_mode(Some(3), true),
            Err(CliError::Usage(_))
        ));
        assert_eq!(
            sample_mode(None, false).unwrap(),
            (PredictMode::Deterministic, 1)
        );
        assert_eq!(
            sample_mode(Some(4), false).unwrap(),
            (PredictMode::Sample, 4)
        );
    }

    #[test]
    fn overlay_rejects_unknown_keys() {
        let patch = serde_json::json!({"bogus": 1});
        assert!(overlay(&TrainConfig::toy(Stage::Autoencoder), Some(&patch), "train").is_err());
        let patch = serde_json::json!({"batch_size": 2});
        let t: TrainConfig =
            overlay(&TrainConfig::toy(Stage::Autoencoder), Some(&patch), "train").unwrap();
        assert_eq!(t.batch_size, 2);
    }
}
