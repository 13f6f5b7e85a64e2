//! Attentive neural-process predictor over frame features.
//!
//! Layout convention: a batch of feature clips is `(B, L, N, D)` with
//! `N = H * W` tokens per frame. Coordinate encodings are `(L, N, D)` and are
//! shared across the batch. Attention is split into spatial (within a frame)
//! and temporal (across frames at one location) passes and is never masked,
//! so the encoder is permutation-equivariant along time and the decoder is
//! invariant to the order of the context set.

use candle_core::Tensor;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{ChannelNorm, Conv2d, FeedForward, LayerNorm, Linear, MultiHeadAttention, Scope};

/// Lower bound on every event standard deviation.
pub const SIGMA_MIN: f64 = 1e-4;

/// Transformer encoder output `M`, `(B, L, N, D)`.
#[derive(Debug, Clone)]
pub struct ContextMemory(pub Tensor);

/// Diagonal Gaussian over the event variable; both tensors `(B, N, D)`.
#[derive(Debug, Clone)]
pub struct EventDistribution {
    pub mu: Tensor,
    pub sigma: Tensor,
}

/// A draw of the event variable, `(B, N, D)`.
#[derive(Debug, Clone)]
pub struct EventSample(pub Tensor);

/// How the event variable is chosen.
#[derive(Debug, Clone)]
pub enum EventMode {
    /// `z = mu`.
    Deterministic,
    /// `z = mu + sigma * noise`, noise `(B, N, D)` standard normal.
    Sample(Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventPath {
    Context,
    Target,
}

fn add_pos(x: &Tensor, pos: &Tensor) -> Result<Tensor> {
    Ok(x.broadcast_add(pos)?)
}

/// Flatten `(B, L, N, D)` for attention within each frame: `(B * L, N, D)`.
fn spatial_view(x: &Tensor) -> Result<Tensor> {
    let (b, l, n, d) = x.dims4()?;
    Ok(x.reshape((b * l, n, d))?)
}

/// `(B, L, N, D)` -> `(B * N, L, D)` for attention along time.
fn temporal_view(x: &Tensor) -> Result<Tensor> {
    let (b, l, n, d) = x.dims4()?;
    Ok(x.transpose(1, 2)?.contiguous()?.reshape((b * n, l, d))?)
}

fn from_temporal(x: &Tensor, b: usize, n: usize) -> Result<Tensor> {
    let (_, l, d) = x.dims3()?;
    Ok(x.reshape((b, n, l, d))?.transpose(1, 2)?.contiguous()?)
}

/// Spatial attention, temporal attention, feed-forward; pre-norm residuals.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    norm_spatial: LayerNorm,
    spatial: MultiHeadAttention,
    norm_temporal: LayerNorm,
    temporal: MultiHeadAttention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

impl EncoderBlock {
    pub fn new(mut vs: Scope<'_>, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm_spatial: LayerNorm::new(vs.pp("norm_spatial"), dim)?,
            spatial: MultiHeadAttention::new(vs.pp("spatial"), dim, heads)?,
            norm_temporal: LayerNorm::new(vs.pp("norm_temporal"), dim)?,
            temporal: MultiHeadAttention::new(vs.pp("temporal"), dim, heads)?,
            norm_ffn: LayerNorm::new(vs.pp("norm_ffn"), dim)?,
            ffn: FeedForward::new(vs.pp("ffn"), dim, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let (b, _, n, _) = x.dims4()?;

        let h = self.norm_spatial.forward(x)?;
        let qk = spatial_view(&add_pos(&h, pos)?)?;
        let out = self.spatial.forward(&qk, &qk, &spatial_view(&h)?)?;
        let x = (x + out.reshape(x.dims())?)?;

        let h = self.norm_temporal.forward(&x)?;
        let qk = temporal_view(&add_pos(&h, pos)?)?;
        let out = self.temporal.forward(&qk, &qk, &temporal_view(&h)?)?;
        let x = (&x + from_temporal(&out, b, n)?)?;

        let h = self.norm_ffn.forward(&x)?;
        Ok((&x + self.ffn.forward(&h)?)?)
    }
}

/// Stack of encoder blocks with a closing norm. Zero blocks is the identity.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    blocks: Vec<EncoderBlock>,
    norm: Option<LayerNorm>,
}

impl TransformerEncoder {
    pub fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.feature_dim;
        let blocks = (0..cfg.encoder_blocks)
            .map(|i| EncoderBlock::new(vs.pp(format!("block{i}")), d, cfg.heads, d * cfg.ffn_mult))
            .collect::<Result<Vec<_>>>()?;
        let norm = if blocks.is_empty() {
            None
        } else {
            Some(LayerNorm::new(vs.pp("norm"), d)?)
        };
        Ok(Self { blocks, norm })
    }

    /// `M = T_E(X, Y)`; `x`: `(L, N, D)` or `(B, L, N, D)`, `y`: `(B, L, N, D)`.
    pub fn forward(&self, x: &Tensor, y: &Tensor) -> Result<ContextMemory> {
        check_pair(x, y)?;
        let mut h = y.clone();
        for blk in &self.blocks {
            h = blk.forward(&h, x)?;
        }
        if let Some(norm) = &self.norm {
            h = norm.forward(&h)?;
        }
        Ok(ContextMemory(h))
    }
}

fn check_pair(x: &Tensor, y: &Tensor) -> Result<()> {
    let y_dims = y.dims();
    let x_dims = x.dims();
    if y_dims.len() != 4 || x_dims.len() < 3 || x_dims[x_dims.len() - 3..] != y_dims[1..] {
        return Err(Error::ShapeMismatch(format!(
            "coordinate encodings {x_dims:?} do not match features {y_dims:?}"
        )));
    }
    Ok(())
}

/// Spatial self-attention, temporal self-attention, temporal cross-attention
/// into the context memory, feed-forward.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    norm_spatial: LayerNorm,
    spatial: MultiHeadAttention,
    norm_temporal: LayerNorm,
    temporal: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross: MultiHeadAttention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

impl DecoderBlock {
    pub fn new(mut vs: Scope<'_>, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm_spatial: LayerNorm::new(vs.pp("norm_spatial"), dim)?,
            spatial: MultiHeadAttention::new(vs.pp("spatial"), dim, heads)?,
            norm_temporal: LayerNorm::new(vs.pp("norm_temporal"), dim)?,
            temporal: MultiHeadAttention::new(vs.pp("temporal"), dim, heads)?,
            norm_cross: LayerNorm::new(vs.pp("norm_cross"), dim)?,
            cross: MultiHeadAttention::new(vs.pp("cross"), dim, heads)?,
            norm_ffn: LayerNorm::new(vs.pp("norm_ffn"), dim)?,
            ffn: FeedForward::new(vs.pp("ffn"), dim, hidden)?,
        })
    }

    /// `q`: `(B, L_T, N, D)`; `mem_keys` / `mem_values`: `(B * N, L_C, D)`.
    pub fn forward(
        &self,
        q: &Tensor,
        x_t: &Tensor,
        mem_keys: &Tensor,
        mem_values: &Tensor,
    ) -> Result<Tensor> {
        let (b, _, n, _) = q.dims4()?;

        let h = self.norm_spatial.forward(q)?;
        let qk = spatial_view(&add_pos(&h, x_t)?)?;
        let out = self.spatial.forward(&qk, &qk, &spatial_view(&h)?)?;
        let q = (q + out.reshape(q.dims())?)?;

        let h = self.norm_temporal.forward(&q)?;
        let qk = temporal_view(&add_pos(&h, x_t)?)?;
        let out = self.temporal.forward(&qk, &qk, &temporal_view(&h)?)?;
        let q = (&q + from_temporal(&out, b, n)?)?;

        let h = self.norm_cross.forward(&q)?;
        let query = temporal_view(&add_pos(&h, x_t)?)?;
        let out = self.cross.forward(&query, mem_keys, mem_values)?;
        let q = (&q + from_temporal(&out, b, n)?)?;

        let h = self.norm_ffn.forward(&q)?;
        Ok((&q + self.ffn.forward(&h)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct TransformerDecoder {
    blocks: Vec<DecoderBlock>,
    norm: LayerNorm,
    head: Linear,
}

impl TransformerDecoder {
    pub fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.feature_dim;
        let blocks = (0..cfg.decoder_blocks)
            .map(|i| DecoderBlock::new(vs.pp(format!("block{i}")), d, cfg.heads, d * cfg.ffn_mult))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            blocks,
            norm: LayerNorm::new(vs.pp("norm"), d)?,
            head: Linear::new(vs.pp("head"), d, d)?,
        })
    }

    /// `Y_T = T_D(X_T, X_C, M_C, z)`; the event sample seeds every target query.
    pub fn forward(
        &self,
        x_t: &Tensor,
        x_c: &Tensor,
        memory: &ContextMemory,
        z: &EventSample,
    ) -> Result<Tensor> {
        let m = &memory.0;
        let (b, l_c, n, d) = m.dims4()?;
        let xc_len = x_c.dims()[x_c.rank() - 3];
        if xc_len != l_c {
            return Err(Error::ShapeMismatch(format!(
                "{xc_len} context encodings for {l_c} memory frames"
            )));
        }
        let l_t = x_t.dims()[x_t.rank() - 3];
        if l_t == 0 {
            return Err(Error::Request("no target coordinates".into()));
        }
        let (zb, zn, zd) = z.0.dims3()?;
        if (zb, zn, zd) != (b, n, d) {
            return Err(Error::ShapeMismatch(format!(
                "event sample {:?} vs memory batch/tokens/width {:?}",
                (zb, zn, zd),
                (b, n, d)
            )));
        }
        let keys = temporal_view(&add_pos(m, x_c)?)?;
        let values = temporal_view(m)?;
        let mut q = z.0.unsqueeze(1)?.repeat((1, l_t, 1, 1))?;
        for blk in &self.blocks {
            q = blk.forward(&q, x_t, &keys, &values)?;
        }
        self.head.forward(&self.norm.forward(&q)?)
    }
}

/// Small CNN mapping the time-averaged memory to `(mu, sigma)`.
#[derive(Debug, Clone)]
pub struct EventEncoder {
    convs: Vec<(Conv2d, ChannelNorm)>,
    mu_head: Conv2d,
    sigma_head: Conv2d,
    grid: usize,
}

impl EventEncoder {
    pub fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.feature_dim;
        let convs = (0..3)
            .map(|i| {
                Ok((
                    Conv2d::new(vs.pp(format!("conv{i}")), d, d, 3, 1, 1)?,
                    ChannelNorm::new(vs.pp(format!("norm{i}")), d)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            convs,
            mu_head: Conv2d::new(vs.pp("mu"), d, d, 3, 1, 1)?,
            sigma_head: Conv2d::new(vs.pp("sigma"), d, d, 3, 1, 1)?,
            grid: cfg.grid(),
        })
    }

    pub fn forward(&self, memory: &ContextMemory) -> Result<EventDistribution> {
        let pooled = memory.0.mean(1)?;
        let (b, n, d) = pooled.dims3()?;
        let mut h = pooled
            .reshape((b, self.grid, self.grid, d))?
            .permute((0, 3, 1, 2))?
            .contiguous()?;
        for (conv, norm) in &self.convs {
            h = norm.forward(&conv.forward(&h)?)?.relu()?;
        }
        let to_tokens = |t: Tensor| -> Result<Tensor> {
            Ok(t.permute((0, 2, 3, 1))?.contiguous()?.reshape((b, n, d))?)
        };
        let mu = to_tokens(self.mu_head.forward(&h)?)?;
        let raw = to_tokens(self.sigma_head.forward(&h)?)?;
        let sigma = (crate::nn::softplus(&raw)? + SIGMA_MIN)?;
        Ok(EventDistribution { mu, sigma })
    }
}

/// Reparameterized draw; `None` returns the mean.
pub fn sample_event(dist: &EventDistribution, noise: Option<&Tensor>) -> Result<EventSample> {
    match noise {
        None => Ok(EventSample(dist.mu.clone())),
        Some(eps) => Ok(EventSample((&dist.mu + (&dist.sigma * eps)?)?)),
    }
}

/// Outputs of one predictor pass.
#[derive(Debug, Clone)]
pub struct PredictorOutput {
    /// `(B, L_T, N, D)`.
    pub y_hat: Tensor,
    pub prior: EventDistribution,
    pub posterior: Option<EventDistribution>,
    pub z: EventSample,
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub encoder: TransformerEncoder,
    pub decoder: TransformerDecoder,
    pub context_event: EventEncoder,
    pub target_event: EventEncoder,
}

/// Parameter-name prefixes of the predictor parts.
pub const ENCODER_PREFIX: &str = "te.";
pub const DECODER_PREFIX: &str = "td.";
pub const CONTEXT_EVENT_PREFIX: &str = "ec.";
pub const TARGET_EVENT_PREFIX: &str = "et.";

impl Predictor {
    /// Builds under the `te`, `td`, `ec` and `et` scopes of `vs`.
    pub fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            encoder: TransformerEncoder::new(vs.pp("te"), cfg)?,
            decoder: TransformerDecoder::new(vs.pp("td"), cfg)?,
            context_event: EventEncoder::new(vs.pp("ec"), cfg)?,
            target_event: EventEncoder::new(vs.pp("et"), cfg)?,
        })
    }

    pub fn transformer_encode(&self, x: &Tensor, y: &Tensor) -> Result<ContextMemory> {
        self.encoder.forward(x, y)
    }

    pub fn encode_event(
        &self,
        memory: &ContextMemory,
        which: EventPath,
    ) -> Result<EventDistribution> {
        match which {
            EventPath::Context => self.context_event.forward(memory),
            EventPath::Target => self.target_event.forward(memory),
        }
    }

    pub fn transformer_decode(
        &self,
        x_t: &Tensor,
        x_c: &Tensor,
        memory: &ContextMemory,
        z: &EventSample,
    ) -> Result<Tensor> {
        self.decoder.forward(x_t, x_c, memory, z)
    }

    /// Full pass. With `y_t` the target path runs and `z` comes from the
    /// posterior; otherwise from the context prior.
    pub fn predict_features(
        &self,
        x_c: &Tensor,
        y_c: &Tensor,
        x_t: &Tensor,
        mode: &EventMode,
        y_t: Option<&Tensor>,
    ) -> Result<PredictorOutput> {
        let m_c = self.transformer_encode(x_c, y_c)?;
        let prior = self.encode_event(&m_c, EventPath::Context)?;
        let posterior = match y_t {
            Some(y_t) => {
                let m_t = self.transformer_encode(x_t, y_t)?;
                Some(self.encode_event(&m_t, EventPath::Target)?)
            }
            None => None,
        };
        let source = posterior.as_ref().unwrap_or(&prior);
        let z = match mode {
            EventMode::Deterministic => sample_event(source, None)?,
            EventMode::Sample(eps) => sample_event(source, Some(eps))?,
        };
        let y_hat = self.transformer_decode(x_t, x_c, &m_c, &z)?;
        Ok(PredictorOutput {
            y_hat,
            prior,
            posterior,
            z,
        })
    }
}

/// Batch of coordinate encodings broadcast to `(B, L, N, D)`.
pub fn broadcast_batch(x: &Tensor, batch: usize) -> Result<Tensor> {
    let (l, n, d) = x.dims3()?;
    Ok(x.unsqueeze(0)?
        .broadcast_as((batch, l, n, d))?
        .contiguous()?)
}

/// Mean over the event dimensions, handy for logging.
pub fn mean_sigma(dist: &EventDistribution) -> Result<f64> {
    Ok(dist
        .sigma
        .to_dtype(candle_core::DType::F64)?
        .mean_all()?
        .to_scalar::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{standard_normal, VarStore};
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(dtype: DType) -> (VarStore, Predictor, ModelConfig) {
        let cfg = ModelConfig {
            feature_dim: 16,
            heads: 2,
            ..ModelConfig::toy()
        };
        let mut vs = VarStore::new(dtype, 11);
        let p = Predictor::new(vs.root(), &cfg).unwrap();
        (vs, p, cfg)
    }

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize], dtype: DType) -> Tensor {
        standard_normal(rng, shape, dtype, &Device::Cpu).unwrap()
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b)
            .unwrap()
            .abs()
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar()
            .unwrap()
    }

    #[test]
    fn encoder_is_time_equivariant() {
        let (_, p, cfg) = setup(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = cfg.tokens();
        let x = randn(&mut rng, &[5, n, 16], DType::F64);
        let y = randn(&mut rng, &[2, 5, n, 16], DType::F64);
        let perm = Tensor::new(&[3u32, 0, 4, 1, 2], &Device::Cpu).unwrap();
        let m = p.transformer_encode(&x, &y).unwrap().0;
        let mp = p
            .transformer_encode(
                &x.index_select(&perm, 0).unwrap(),
                &y.index_select(&perm, 1).unwrap(),
            )
            .unwrap()
            .0;
        assert!(max_abs(&m.index_select(&perm, 1).unwrap(), &mp) < 1e-10);
    }

    #[test]
    fn single_frame_encode_is_finite() {
        let (_, p, cfg) = setup(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = randn(&mut rng, &[1, cfg.tokens(), 16], DType::F32);
        let y = randn(&mut rng, &[1, 1, cfg.tokens(), 16], DType::F32);
        let m = p.transformer_encode(&x, &y).unwrap().0;
        let v: Vec<f32> = m.flatten_all().unwrap().to_vec1().unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn encoder_mixes_all_locations() {
        let (_, p, cfg) = setup(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = cfg.tokens();
        let x = randn(&mut rng, &[3, n, 16], DType::F64);
        let y = randn(&mut rng, &[1, 3, n, 16], DType::F64);
        let base = p.transformer_encode(&x, &y).unwrap().0;
        // perturb frame 0, token 0
        let mut bump = vec![0.0f64; 3 * n * 16];
        bump[0] = 0.5;
        let y2 = (&y + Tensor::from_vec(bump, (1, 3, n, 16), &Device::Cpu).unwrap()).unwrap();
        let moved = p.transformer_encode(&x, &y2).unwrap().0;
        let diff = (moved - base).unwrap().abs().unwrap().sum(3).unwrap();
        let diff: Vec<Vec<Vec<f64>>> = diff.squeeze(0).unwrap().to_vec2().map(|v| vec![v]).unwrap();
        // every (frame, token) changed
        for row in &diff[0] {
            for v in row {
                assert!(*v > 0.0);
            }
        }
    }

    #[test]
    fn event_is_order_and_duplication_invariant() {
        let (_, p, cfg) = setup(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = randn(&mut rng, &[2, 4, cfg.tokens(), 16], DType::F64);
        let perm = Tensor::new(&[2u32, 0, 3, 1], &Device::Cpu).unwrap();
        let a = p
            .encode_event(&ContextMemory(m.clone()), EventPath::Context)
            .unwrap();
        let b = p
            .encode_event(
                &ContextMemory(m.index_select(&perm, 1).unwrap()),
                EventPath::Context,
            )
            .unwrap();
        let c = p
            .encode_event(
                &ContextMemory(Tensor::cat(&[&m, &m], 1).unwrap()),
                EventPath::Context,
            )
            .unwrap();
        assert!(max_abs(&a.mu, &b.mu) < 1e-12 && max_abs(&a.sigma, &b.sigma) < 1e-12);
        assert!(max_abs(&a.mu, &c.mu) < 1e-12 && max_abs(&a.sigma, &c.sigma) < 1e-12);
        let smin: f64 = a.sigma.min_all().unwrap().to_scalar().unwrap();
        assert!(smin >= SIGMA_MIN);
    }

    #[test]
    fn sigma_floor_holds_for_extreme_inputs() {
        let (_, p, cfg) = setup(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = (randn(&mut rng, &[3, 2, cfg.tokens(), 16], DType::F32) * 1e3).unwrap();
        for path in [EventPath::Context, EventPath::Target] {
            let d = p.encode_event(&ContextMemory(m.clone()), path).unwrap();
            let smin: f32 = d.sigma.min_all().unwrap().to_scalar().unwrap();
            assert!(smin as f64 >= SIGMA_MIN * (1.0 - 1e-6));
        }
    }

    #[test]
    fn sampling_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = randn(&mut rng, &[1, 4, 3], DType::F64);
        let sigma = Tensor::full(SIGMA_MIN, (1, 4, 3), &Device::Cpu).unwrap();
        let dist = EventDistribution {
            mu: mu.clone(),
            sigma,
        };
        assert_eq!(max_abs(&sample_event(&dist, None).unwrap().0, &mu), 0.0);
        let eps = randn(&mut rng, &[1, 4, 3], DType::F64)
            .clamp(-3.0, 3.0)
            .unwrap();
        let z = sample_event(&dist, Some(&eps)).unwrap().0;
        assert!(max_abs(&z, &mu) <= 3e-4 + 1e-15);
    }

    #[test]
    fn decoder_context_invariance_and_shape() {
        let (_, p, cfg) = setup(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = cfg.tokens();
        let x_c = randn(&mut rng, &[6, n, 16], DType::F32);
        let m = randn(&mut rng, &[2, 6, n, 16], DType::F32);
        let x_t = randn(&mut rng, &[7, n, 16], DType::F32);
        let z = EventSample(randn(&mut rng, &[2, n, 16], DType::F32));
        let y = p
            .transformer_decode(&x_t, &x_c, &ContextMemory(m.clone()), &z)
            .unwrap();
        assert_eq!(y.dims(), &[2, 7, n, 16]);
        let perm = Tensor::new(&[5u32, 2, 0, 4, 1, 3], &Device::Cpu).unwrap();
        let yp = p
            .transformer_decode(
                &x_t,
                &x_c.index_select(&perm, 0).unwrap(),
                &ContextMemory(m.index_select(&perm, 1).unwrap()),
                &z,
            )
            .unwrap();
        assert!(max_abs(&y, &yp) < 1e-5);
    }

    #[test]
    fn decoder_rejects_mismatched_context() {
        let (_, p, cfg) = setup(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = cfg.tokens();
        let x_c = randn(&mut rng, &[5, n, 16], DType::F32);
        let m = randn(&mut rng, &[1, 6, n, 16], DType::F32);
        let x_t = randn(&mut rng, &[2, n, 16], DType::F32);
        let z = EventSample(randn(&mut rng, &[1, n, 16], DType::F32));
        assert!(p
            .transformer_decode(&x_t, &x_c, &ContextMemory(m), &z)
            .is_err());
    }

    #[test]
    fn target_equivariance() {
        let (_, p, cfg) = setup(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = cfg.tokens();
        let x_c = randn(&mut rng, &[3, n, 16], DType::F64);
        let y_c = randn(&mut rng, &[1, 3, n, 16], DType::F64);
        let x_t = randn(&mut rng, &[4, n, 16], DType::F64);
        let perm = Tensor::new(&[2u32, 3, 0, 1], &Device::Cpu).unwrap();
        let a = p
            .predict_features(&x_c, &y_c, &x_t, &EventMode::Deterministic, None)
            .unwrap();
        let b = p
            .predict_features(
                &x_c,
                &y_c,
                &x_t.index_select(&perm, 0).unwrap(),
                &EventMode::Deterministic,
                None,
            )
            .unwrap();
        assert!(max_abs(&a.y_hat.index_select(&perm, 1).unwrap(), &b.y_hat) < 1e-10);
    }

    #[test]
    fn posterior_differs_from_prior() {
        let (_, p, cfg) = setup(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = cfg.tokens();
        let x_c = randn(&mut rng, &[3, n, 16], DType::F64);
        let y_c = randn(&mut rng, &[1, 3, n, 16], DType::F64);
        let x_t = randn(&mut rng, &[2, n, 16], DType::F64);
        let y_t = randn(&mut rng, &[1, 2, n, 16], DType::F64);
        let out = p
            .predict_features(&x_c, &y_c, &x_t, &EventMode::Deterministic, Some(&y_t))
            .unwrap();
        let post = out.posterior.unwrap();
        assert!(max_abs(&post.mu, &out.prior.mu) > 1e-3);
        assert_eq!(max_abs(&out.z.0, &post.mu), 0.0);
    }
}
