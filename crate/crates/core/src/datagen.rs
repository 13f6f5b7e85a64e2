//! Video clips, task splits, the synthetic bouncing-shapes generator and
//! frame-folder datasets.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, ArrayView3, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FRAME_PATTERN: &str = "frame_%05d.png";

/// Maximum deflection applied to a velocity when a shape bounces.
pub const BOUNCE_JITTER_DEG: f64 = 15.0;

/// A sequence of frames `L x H x W x C` in `[0, 1]` with strictly increasing raw times.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Array4<f32>,
    times: Vec<f64>,
}

impl VideoClip {
    pub fn new(frames: Array4<f32>, times: Vec<f64>) -> Result<Self> {
        let len = frames.len_of(Axis(0));
        if len < 2 {
            return Err(Error::InvalidDimensions(format!(
                "a clip needs at least 2 frames, got {len}"
            )));
        }
        if times.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} times for {len} frames",
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidDimensions(
                "clip times must be strictly increasing".into(),
            ));
        }
        if frames.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidDimensions(
                "pixel values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { frames, times })
    }

    /// Clip whose raw times are the frame indices.
    pub fn from_frames(frames: Array4<f32>) -> Result<Self> {
        let len = frames.len_of(Axis(0));
        Self::new(frames, (0..len).map(|i| i as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn frames(&self) -> &Array4<f32> {
        &self.frames
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(height, width, channels)`.
    pub fn frame_shape(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.frames.dim();
        (h, w, c)
    }

    pub fn frame(&self, i: usize) -> ArrayView3<'_, f32> {
        self.frames.index_axis(Axis(0), i)
    }

    /// Frames at `indices`, stacked in the given order.
    pub fn select(&self, indices: &[usize]) -> Array4<f32> {
        self.frames.select(Axis(0), indices)
    }

    /// `len` consecutive frames starting at `start`, re-timed from 0.
    pub fn window(&self, start: usize, len: usize) -> Result<VideoClip> {
        if start + len > self.len() {
            return Err(Error::InvalidDimensions(format!(
                "window {start}..{} exceeds clip length {}",
                start + len,
                self.len()
            )));
        }
        VideoClip::from_frames(
            self.frames
                .slice(s![start..start + len, .., .., ..])
                .to_owned(),
        )
    }

    pub fn flipped(&self, horizontal: bool, vertical: bool) -> VideoClip {
        let mut f = self.frames.view();
        if horizontal {
            f.invert_axis(Axis(2));
        }
        if vertical {
            f.invert_axis(Axis(1));
        }
        VideoClip {
            frames: f.to_owned(),
            times: self.times.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Vfp,
    Vfi,
    Vpe,
    Vrc,
}

/// How to carve a clip into context and target frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum SplitSpec {
    /// `context` leading frames predict the following `targets`.
    Vfp { context: usize, targets: usize },
    /// `targets` leading frames are predicted from the following `context`.
    Vpe { targets: usize, context: usize },
    /// `past + future` frames bracket `targets` intermediate frames.
    Vfi {
        past: usize,
        future: usize,
        targets: usize,
    },
    /// A uniformly random context subset with size drawn from the range.
    Vrc {
        min_context: usize,
        max_context: usize,
    },
}

impl SplitSpec {
    pub fn task(&self) -> Task {
        match self {
            SplitSpec::Vfp { .. } => Task::Vfp,
            SplitSpec::Vpe { .. } => Task::Vpe,
            SplitSpec::Vfi { .. } => Task::Vfi,
            SplitSpec::Vrc { .. } => Task::Vrc,
        }
    }

    /// Number of frames the split covers for a clip of `clip_len`.
    pub fn span(&self, clip_len: usize) -> usize {
        match *self {
            SplitSpec::Vfp { context, targets } | SplitSpec::Vpe { targets, context } => {
                context + targets
            }
            SplitSpec::Vfi {
                past,
                future,
                targets,
            } => past + future + targets,
            SplitSpec::Vrc { .. } => clip_len,
        }
    }

    pub fn validate(&self, clip_len: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSplit(m));
        match *self {
            SplitSpec::Vfp { context, targets } | SplitSpec::Vpe { targets, context } => {
                if context == 0 || targets == 0 {
                    return bad("context and target counts must both be positive".into());
                }
            }
            SplitSpec::Vfi {
                past,
                future,
                targets,
            } => {
                if past == 0 || future == 0 {
                    return bad(format!(
                        "interpolation needs context on both sides (past={past}, future={future}); \
                         at least 2 context frames are required"
                    ));
                }
                if targets == 0 {
                    return bad("interpolation needs at least one target frame".into());
                }
            }
            SplitSpec::Vrc {
                min_context,
                max_context,
            } => {
                if min_context == 0 || min_context > max_context {
                    return bad(format!(
                        "context range [{min_context}, {max_context}] is empty or starts at 0"
                    ));
                }
                if max_context >= clip_len {
                    return bad(format!(
                        "max context {max_context} leaves no target frame in a clip of {clip_len}"
                    ));
                }
            }
        }
        let span = self.span(clip_len);
        if span > clip_len {
            return bad(format!(
                "split spans {span} frames but the clip has {clip_len}"
            ));
        }
        Ok(())
    }
}

/// Partition of `0..len` into sorted context and target indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub context_idx: Vec<usize>,
    pub target_idx: Vec<usize>,
    pub task: Task,
}

impl TaskSplit {
    pub fn len(&self) -> usize {
        self.context_idx.len() + self.target_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Check the partition and task-ordering invariants.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSplit(m.to_string()));
        if self.context_idx.is_empty() || self.target_idx.is_empty() {
            return bad("context and target sets must be non-empty");
        }
        let sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        if !sorted(&self.context_idx) || !sorted(&self.target_idx) {
            return bad("indices must be strictly increasing");
        }
        let mut all: Vec<usize> = self
            .context_idx
            .iter()
            .chain(&self.target_idx)
            .copied()
            .collect();
        all.sort_unstable();
        if all != (0..self.len()).collect::<Vec<_>>() {
            return bad("context and targets must partition 0..len");
        }
        let (c_min, c_max) = (self.context_idx[0], *self.context_idx.last().unwrap());
        let (t_min, t_max) = (self.target_idx[0], *self.target_idx.last().unwrap());
        let ok = match self.task {
            Task::Vfp => c_max < t_min,
            Task::Vpe => c_min > t_max,
            Task::Vfi => c_min < t_min && c_max > t_max,
            Task::Vrc => true,
        };
        if !ok {
            return bad("index ordering violates the task definition");
        }
        Ok(())
    }
}

/// Split a clip of `clip_len` frames. Fixed-layout tasks cover the leading
/// `spec.span()` frames; random completion covers the whole clip.
pub fn split_clip(clip_len: usize, spec: &SplitSpec, seed: u64) -> Result<TaskSplit> {
    spec.validate(clip_len)?;
    let (context_idx, target_idx): (Vec<usize>, Vec<usize>) = match *spec {
        SplitSpec::Vfp { context, targets } => (
            (0..context).collect(),
            (context..context + targets).collect(),
        ),
        SplitSpec::Vpe { targets, context } => (
            (targets..targets + context).collect(),
            (0..targets).collect(),
        ),
        SplitSpec::Vfi {
            past,
            future,
            targets,
        } => {
            let ctx = (0..past)
                .chain(past + targets..past + targets + future)
                .collect();
            (ctx, (past..past + targets).collect())
        }
        SplitSpec::Vrc {
            min_context,
            max_context,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(min_context..=max_context);
            let mut ctx = index::sample(&mut rng, clip_len, n).into_vec();
            ctx.sort_unstable();
            let tgt = (0..clip_len)
                .filter(|i| ctx.binary_search(i).is_err())
                .collect();
            (ctx, tgt)
        }
    };
    let split = TaskSplit {
        context_idx,
        target_idx,
        task: spec.task(),
    };
    split.validate()?;
    Ok(split)
}

// ---------------------------------------------------------------------------
// Synthetic bouncing shapes

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapesConfig {
    pub num_clips: usize,
    pub len: usize,
    pub size: usize,
    pub num_shapes: usize,
    pub seed: u64,
}

impl ShapesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.len < 2 || self.size < 16 || self.num_shapes == 0 || self.num_clips == 0 {
            return Err(Error::InvalidDimensions(format!(
                "need clips >= 1, len >= 2, size >= 16, shapes >= 1; got {} clips, len {}, size {}, {} shapes",
                self.num_clips, self.len, self.size, self.num_shapes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Square,
    Disc,
}

#[derive(Debug, Clone, Copy)]
struct Sprite {
    kind: ShapeKind,
    half: f64,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl Sprite {
    fn covers(&self, x: f64, y: f64) -> bool {
        let dx = x - self.pos[0];
        let dy = y - self.pos[1];
        match self.kind {
            ShapeKind::Square => dx.abs() <= self.half && dy.abs() <= self.half,
            ShapeKind::Disc => dx * dx + dy * dy <= self.half * self.half,
        }
    }

    /// Advance one frame, reflecting off the walls of `[0, size]^2`.
    fn step(&mut self, size: f64, rng: &mut ChaCha8Rng) {
        let lo = self.half;
        let hi = size - self.half;
        let mut bounced = [false; 2];
        for axis in 0..2 {
            self.pos[axis] += self.vel[axis];
            if self.pos[axis] < lo {
                self.pos[axis] = 2.0 * lo - self.pos[axis];
                self.vel[axis] = self.vel[axis].abs();
                bounced[axis] = true;
            } else if self.pos[axis] > hi {
                self.pos[axis] = 2.0 * hi - self.pos[axis];
                self.vel[axis] = -self.vel[axis].abs();
                bounced[axis] = true;
            }
        }
        if bounced.iter().any(|b| *b) {
            let inward = self.vel;
            let jitter = rng
                .gen_range(-BOUNCE_JITTER_DEG..=BOUNCE_JITTER_DEG)
                .to_radians();
            let (s, c) = jitter.sin_cos();
            let [vx, vy] = self.vel;
            self.vel = [vx * c - vy * s, vx * s + vy * c];
            // never let the jitter point a bounced axis back into the wall
            for axis in 0..2 {
                if bounced[axis] && self.vel[axis].signum() != inward[axis].signum() {
                    self.vel[axis] = -self.vel[axis];
                }
            }
        }
    }
}

const SUPERSAMPLE: usize = 4;

fn render(sprites: &[Sprite], size: usize) -> Array3<f32> {
    let mut frame = Array3::<f32>::zeros((size, size, 1));
    let step = 1.0 / SUPERSAMPLE as f64;
    for sp in sprites {
        let x0 = (sp.pos[0] - sp.half).floor().max(0.0) as usize;
        let x1 = ((sp.pos[0] + sp.half).ceil() as usize).min(size);
        let y0 = (sp.pos[1] - sp.half).floor().max(0.0) as usize;
        let y1 = ((sp.pos[1] + sp.half).ceil() as usize).min(size);
        for py in y0..y1 {
            for px in x0..x1 {
                let mut hits = 0;
                for sy in 0..SUPERSAMPLE {
                    for sx in 0..SUPERSAMPLE {
                        let x = px as f64 + (sx as f64 + 0.5) * step;
                        let y = py as f64 + (sy as f64 + 0.5) * step;
                        if sp.covers(x, y) {
                            hits += 1;
                        }
                    }
                }
                let cov = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                let cell = &mut frame[[py, px, 0]];
                *cell = cell.max(cov);
            }
        }
    }
    // 8-bit quantization so PNG storage is lossless
    frame.mapv_inplace(|v| (v * 255.0).round() / 255.0);
    frame
}

/// Generate clip `index` of a bouncing-shapes dataset. Each clip draws from its
/// own ChaCha stream, so clips are independent of generation order.
pub fn generate_clip(cfg: &ShapesConfig, index: usize) -> Result<VideoClip> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let size = cfg.size as f64;
    let half = (cfg.size as f64 / 8.0).max(2.0);
    let mut sprites: Vec<Sprite> = (0..cfg.num_shapes)
        .map(|i| {
            let speed = rng.gen_range(1.0..2.0) * size / 32.0;
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            Sprite {
                kind: if i % 2 == 0 {
                    ShapeKind::Square
                } else {
                    ShapeKind::Disc
                },
                half,
                pos: [
                    rng.gen_range(half..size - half),
                    rng.gen_range(half..size - half),
                ],
                vel: [speed * angle.cos(), speed * angle.sin()],
            }
        })
        .collect();
    let mut frames = Array4::<f32>::zeros((cfg.len, cfg.size, cfg.size, 1));
    for t in 0..cfg.len {
        if t > 0 {
            for sp in &mut sprites {
                sp.step(size, &mut rng);
            }
        }
        frames
            .index_axis_mut(Axis(0), t)
            .assign(&render(&sprites, cfg.size));
    }
    VideoClip::from_frames(frames)
}

/// Generate a whole bouncing-shapes dataset in memory.
pub fn generate_moving_shapes(cfg: &ShapesConfig) -> Result<Vec<VideoClip>> {
    (0..cfg.num_clips).map(|i| generate_clip(cfg, i)).collect()
}

// ---------------------------------------------------------------------------
// On-disk datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub dir: String,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_clips: usize,
    /// `[h, w, c]`.
    pub frame_shape: [usize; 3],
    pub clips: Vec<ClipEntry>,
    #[serde(default)]
    pub frame_rate: Option<f64>,
    #[serde(default = "default_pattern")]
    pub frame_pattern: String,
}

fn default_pattern() -> String {
    FRAME_PATTERN.to_string()
}

/// A manifest together with its decoded clips.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<VideoClip>,
}

impl Dataset {
    pub fn from_clips(clips: Vec<VideoClip>, frame_rate: Option<f64>) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| Error::NoClips(PathBuf::from("<memory>")))?;
        let (h, w, c) = first.frame_shape();
        for (i, clip) in clips.iter().enumerate() {
            if clip.frame_shape() != (h, w, c) {
                return Err(Error::ShapeMismatch(format!(
                    "clip {i} has frame shape {:?}, expected {:?}",
                    clip.frame_shape(),
                    (h, w, c)
                )));
            }
        }
        let manifest = DatasetManifest {
            version: MANIFEST_VERSION,
            num_clips: clips.len(),
            frame_shape: [h, w, c],
            clips: clips
                .iter()
                .enumerate()
                .map(|(i, c)| ClipEntry {
                    dir: clip_dir_name(i),
                    length: c.len(),
                })
                .collect(),
            frame_rate,
            frame_pattern: default_pattern(),
        };
        Ok(Self { manifest, clips })
    }

    /// Write every clip as PNG frames plus `manifest.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        for (entry, clip) in self.manifest.clips.iter().zip(&self.clips) {
            let clip_dir = dir.join(&entry.dir);
            fs::create_dir_all(&clip_dir)?;
            for t in 0..clip.len() {
                write_png(&clip_dir.join(frame_file_name(t)), clip.frame(t))?;
            }
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(path)
    }
}

pub fn clip_dir_name(i: usize) -> String {
    format!("clip_{i:05}")
}

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:05}.png")
}

/// Generate a bouncing-shapes dataset and write it to `out`.
pub fn gen_moving_shapes(cfg: &ShapesConfig, out: &Path) -> Result<DatasetManifest> {
    let ds = Dataset::from_clips(generate_moving_shapes(cfg)?, Some(1.0))?;
    ds.save(out)?;
    Ok(ds.manifest)
}

/// Write a `H x W x C` frame (C = 1 or 3) as an 8-bit PNG.
pub fn write_png(path: &Path, frame: ArrayView3<'_, f32>) -> Result<()> {
    let (h, w, c) = frame.dim();
    let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let res = match c {
        1 => image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([to_u8(frame[[y as usize, x as usize, 0]])])
        })
        .save(path),
        3 => image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = |k| to_u8(frame[[y as usize, x as usize, k]]);
            image::Rgb([p(0), p(1), p(2)])
        })
        .save(path),
        _ => {
            return Err(Error::InvalidDimensions(format!(
                "cannot write a {c}-channel frame as PNG"
            )))
        }
    };
    res.map_err(|e| Error::image(path, e))
}

pub fn read_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() <= 2 {
        let g = img.to_luma8();
        Ok(Array3::from_shape_fn((h, w, 1), |(y, x, _)| {
            g.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
        }))
    } else {
        let rgb = img.to_rgb8();
        Ok(Array3::from_shape_fn((h, w, 3), |(y, x, k)| {
            rgb.get_pixel(x as u32, y as u32)[k] as f32 / 255.0
        }))
    }
}

fn is_frame_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn load_clip_dir(dir: &Path) -> Result<VideoClip> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| is_frame_file(p));
    files.sort();
    let mut frames: Vec<Array3<f32>> = Vec::with_capacity(files.len());
    for f in &files {
        let frame = read_png(f)?;
        if let Some(first) = frames.first() {
            if first.dim() != frame.dim() {
                return Err(Error::MixedResolution {
                    path: f.clone(),
                    expected: first.dim(),
                    found: frame.dim(),
                });
            }
        }
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(Error::NoClips(dir.to_path_buf()));
    }
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let stacked = ndarray::stack(Axis(0), &views).expect("frames share a shape");
    VideoClip::from_frames(stacked)
}

/// Load a directory of per-clip subdirectories of PNG frames (lexicographic order).
pub fn load_frame_folder(path: &Path) -> Result<Dataset> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(path)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    dirs.retain(|p| p.is_dir());
    dirs.sort();
    let mut clips = Vec::new();
    let mut names = Vec::new();
    for d in dirs {
        let has_frames =
            fs::read_dir(&d)?.any(|e| e.map(|e| is_frame_file(&e.path())).unwrap_or(false));
        if !has_frames {
            continue;
        }
        let clip = load_clip_dir(&d)?;
        if let Some(first) = clips.first() {
            let first: &VideoClip = first;
            if first.frame_shape() != clip.frame_shape() {
                return Err(Error::MixedResolution {
                    path: d.clone(),
                    expected: first.frame_shape(),
                    found: clip.frame_shape(),
                });
            }
        }
        names.push(d.file_name().unwrap().to_string_lossy().into_owned());
        clips.push(clip);
    }
    if clips.is_empty() {
        return Err(Error::NoClips(path.to_path_buf()));
    }
    let mut ds = Dataset::from_clips(clips, None)?;
    for (entry, name) in ds.manifest.clips.iter_mut().zip(names) {
        entry.dir = name;
    }
    Ok(ds)
}

/// Load a dataset, using `manifest.json` when present and scanning otherwise.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = path.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return load_frame_folder(path);
    }
    let manifest: DatasetManifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Manifest(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    if manifest.num_clips != manifest.clips.len() || manifest.clips.is_empty() {
        return Err(Error::Manifest(format!(
            "num_clips is {} but {} clips are listed",
            manifest.num_clips,
            manifest.clips.len()
        )));
    }
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for entry in &manifest.clips {
        let dir = path.join(&entry.dir);
        if !dir.is_dir() {
            return Err(Error::Manifest(format!(
                "missing clip directory {}",
                dir.display()
            )));
        }
        let clip = load_clip_dir(&dir)?;
        let (h, w, c) = clip.frame_shape();
        if [h, w, c] != manifest.frame_shape {
            return Err(Error::Manifest(format!(
                "{} has frame shape {:?}, manifest declares {:?}",
                dir.display(),
                [h, w, c],
                manifest.frame_shape
            )));
        }
        if clip.len() != entry.length {
            return Err(Error::Manifest(format!(
                "{} has {} frames, manifest declares {}",
                dir.display(),
                clip.len(),
                entry.length
            )));
        }
        clips.push(clip);
    }
    Ok(Dataset { manifest, clips })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vfp_protocol_split() {
        let s = split_clip(
            20,
            &SplitSpec::Vfp {
                context: 10,
                targets: 10,
            },
            0,
        )
        .unwrap();
        assert_eq!(s.context_idx, (0..10).collect::<Vec<_>>());
        assert_eq!(s.target_idx, (10..20).collect::<Vec<_>>());
    }

    #[test]
    fn vfi_protocol_split() {
        let spec = SplitSpec::Vfi {
            past: 5,
            future: 5,
            targets: 5,
        };
        let s = split_clip(15, &spec, 0).unwrap();
        let ctx: Vec<usize> = (0..5).chain(10..15).collect();
        assert_eq!(s.context_idx, ctx);
        assert_eq!(s.target_idx, (5..10).collect::<Vec<_>>());
        assert_eq!(s.task, Task::Vfi);
    }

    #[test]
    fn vpe_split_puts_context_after() {
        let s = split_clip(
            8,
            &SplitSpec::Vpe {
                targets: 3,
                context: 5,
            },
            0,
        )
        .unwrap();
        assert_eq!(s.target_idx, vec![0, 1, 2]);
        assert_eq!(s.context_idx, vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn vrc_is_deterministic_per_seed() {
        let spec = SplitSpec::Vrc {
            min_context: 4,
            max_context: 16,
        };
        let a = split_clip(20, &spec, 42).unwrap();
        let b = split_clip(20, &spec, 42).unwrap();
        assert_eq!(a, b);
        assert!((4..=16).contains(&a.context_idx.len()));
    }

    #[test]
    fn vfi_without_both_sides_rejected() {
        let err = split_clip(
            10,
            &SplitSpec::Vfi {
                past: 1,
                future: 0,
                targets: 5,
            },
            0,
        )
        .unwrap_err();
        assert!(
            err.to_string().contains("at least 2 context frames"),
            "{err}"
        );
    }

    #[test]
    fn oversized_split_rejected() {
        assert!(split_clip(
            10,
            &SplitSpec::Vfp {
                context: 8,
                targets: 8
            },
            0
        )
        .is_err());
        assert!(split_clip(
            10,
            &SplitSpec::Vrc {
                min_context: 4,
                max_context: 10
            },
            0
        )
        .is_err());
    }

    #[test]
    fn clip_invariants_enforced() {
        let frames = Array4::<f32>::zeros((1, 4, 4, 1));
        assert!(VideoClip::from_frames(frames).is_err());
        let frames = Array4::<f32>::from_elem((2, 4, 4, 1), 1.5);
        assert!(VideoClip::from_frames(frames).is_err());
        let frames = Array4::<f32>::zeros((2, 4, 4, 1));
        assert!(VideoClip::new(frames, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn generated_shape_contract() {
        let cfg = ShapesConfig {
            num_clips: 1,
            len: 20,
            size: 64,
            num_shapes: 2,
            seed: 0,
        };
        let clips = generate_moving_shapes(&cfg).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].frames().dim(), (20, 64, 64, 1));
        assert_eq!(clips[0].times()[19], 19.0);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = ShapesConfig {
            num_clips: 3,
            len: 12,
            size: 32,
            num_shapes: 2,
            seed: 0,
        };
        assert_eq!(
            generate_moving_shapes(&cfg).unwrap(),
            generate_moving_shapes(&cfg).unwrap()
        );
        let other = ShapesConfig { seed: 1, ..cfg };
        assert_ne!(
            generate_moving_shapes(&cfg).unwrap(),
            generate_moving_shapes(&other).unwrap()
        );
    }

    #[test]
    fn invalid_generator_dimensions() {
        let cfg = ShapesConfig {
            num_clips: 1,
            len: 1,
            size: 64,
            num_shapes: 1,
            seed: 0,
        };
        assert!(generate_moving_shapes(&cfg).is_err());
        let cfg = ShapesConfig {
            num_clips: 1,
            len: 5,
            size: 8,
            num_shapes: 1,
            seed: 0,
        };
        assert!(generate_moving_shapes(&cfg).is_err());
    }

    #[test]
    fn flips_reverse_axes() {
        let mut frames = Array4::<f32>::zeros((2, 2, 3, 1));
        frames[[0, 0, 0, 0]] = 1.0;
        let clip = VideoClip::from_frames(frames).unwrap();
        assert_eq!(clip.flipped(true, false).frames()[[0, 0, 2, 0]], 1.0);
        assert_eq!(clip.flipped(false, true).frames()[[0, 1, 0, 0]], 1.0);
    }
}
