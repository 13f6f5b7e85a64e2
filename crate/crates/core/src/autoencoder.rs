//! Frame autoencoder: a Pix2Pix-style downsampling CNN with residual blocks and
//! non-local (self-attention) layers, and a transposed-convolution decoder.
//!
//! Frames are encoded independently; there is no mixing along time.

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array4;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ConvTranspose2d, Init, InstanceNorm2d, Scope};

fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&(x * 0.2)?)?)
}

/// Non-local block: `x + gate * attention(x)`, with `gate` starting at zero.
#[derive(Debug, Clone)]
pub struct NonLocalAttention {
    query: Conv2d,
    key: Conv2d,
    value: Conv2d,
    gate: Var,
}

impl NonLocalAttention {
    pub fn new(mut vs: Scope<'_>, channels: usize) -> Result<Self> {
        let inner = (channels / 8).max(1);
        Ok(Self {
            query: Conv2d::new(vs.pp("query"), channels, inner, 1, 1, 0)?,
            key: Conv2d::new(vs.pp("key"), channels, inner, 1, 1, 0)?,
            value: Conv2d::new(vs.pp("value"), channels, channels, 1, 1, 0)?,
            gate: vs.var("gate", &[1], Init::Const(0.0))?,
        })
    }

    pub fn gate(&self) -> &Var {
        &self.gate
    }

    /// Attention weights `(N, HW, HW)`: row `j` is the distribution of output
    /// position `j` over input positions.
    pub fn attention(&self, x: &Tensor) -> Result<Tensor> {
        let (n, _, h, w) = x.dims4()?;
        let q = self.query.forward(x)?;
        let inner = q.dim(1)?;
        let q = q
            .reshape((n, inner, h * w))?
            .transpose(1, 2)?
            .contiguous()?;
        let k = self.key.forward(x)?.reshape((n, inner, h * w))?;
        nn::softmax_last(&q.matmul(&k)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let attn = self.attention(x)?;
        let v = self.value.forward(x)?.reshape((n, c, h * w))?;
        let o = v
            .matmul(&attn.transpose(1, 2)?.contiguous()?)?
            .reshape((n, c, h, w))?;
        Ok((x + o.broadcast_mul(&self.gate.reshape((1, 1, 1, 1))?)?)?)
    }
}

#[derive(Debug, Clone)]
struct DownBlock {
    conv: Conv2d,
    norm: InstanceNorm2d,
}

impl DownBlock {
    fn new(mut vs: Scope<'_>, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(vs.pp("conv"), in_ch, out_ch, 4, 2, 1)?,
            norm: InstanceNorm2d::new(vs.pp("norm"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        leaky_relu(&self.norm.forward(&self.conv.forward(x)?)?)
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm2d,
    conv2: Conv2d,
    norm2: InstanceNorm2d,
}

impl ResBlock {
    fn new(mut vs: Scope<'_>, ch: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(vs.pp("conv1"), ch, ch, 3, 1, 1)?,
            norm1: InstanceNorm2d::new(vs.pp("norm1"), ch)?,
            conv2: Conv2d::new(vs.pp("conv2"), ch, ch, 3, 1, 1)?,
            norm2: InstanceNorm2d::new(vs.pp("norm2"), ch)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        Ok((x + h)?)
    }
}

#[derive(Debug, Clone)]
struct UpBlock {
    conv: ConvTranspose2d,
    norm: InstanceNorm2d,
}

impl UpBlock {
    fn new(mut vs: Scope<'_>, in_ch: usize, out_ch: usize) -> Result<Self> {
        Ok(Self {
            conv: ConvTranspose2d::new(vs.pp("conv"), in_ch, out_ch, 4, 2, 1)?,
            norm: InstanceNorm2d::new(vs.pp("norm"), out_ch)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct FrameEncoder {
    downs: Vec<DownBlock>,
    /// Non-local layer after this down block.
    mid_attn_after: usize,
    mid_attn: NonLocalAttention,
    res: Vec<ResBlock>,
    end_attn: NonLocalAttention,
}

impl FrameEncoder {
    fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let widths = cfg.widths();
        let mut downs = Vec::with_capacity(widths.len());
        let mut ch = cfg.channels;
        for (i, &w) in widths.iter().enumerate() {
            downs.push(DownBlock::new(vs.pp(format!("down{i}")), ch, w)?);
            ch = w;
        }
        let mid_attn_after = 1.min(widths.len() - 1);
        let mid_attn = NonLocalAttention::new(vs.pp("mid_attn"), widths[mid_attn_after])?;
        let res = (0..cfg.res_blocks)
            .map(|i| ResBlock::new(vs.pp(format!("res{i}")), ch))
            .collect::<Result<Vec<_>>>()?;
        let end_attn = NonLocalAttention::new(vs.pp("end_attn"), ch)?;
        Ok(Self {
            downs,
            mid_attn_after,
            mid_attn,
            res,
            end_attn,
        })
    }

    /// `(N, C, I, I)` -> `(N, D, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, d) in self.downs.iter().enumerate() {
            h = d.forward(&h)?;
            if i == self.mid_attn_after {
                h = self.mid_attn.forward(&h)?;
            }
        }
        for r in &self.res {
            h = r.forward(&h)?;
        }
        self.end_attn.forward(&h)
    }
}

#[derive(Debug, Clone)]
pub struct FrameDecoder {
    ups: Vec<UpBlock>,
    out: Conv2d,
}

impl FrameDecoder {
    fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        let widths = cfg.widths();
        let n = widths.len();
        let mut ups = Vec::with_capacity(n);
        for j in 0..n {
            let in_ch = widths[n - 1 - j];
            let out_ch = if j + 1 < n {
                widths[n - 2 - j]
            } else {
                widths[0]
            };
            ups.push(UpBlock::new(vs.pp(format!("up{j}")), in_ch, out_ch)?);
        }
        let out = Conv2d::new(vs.pp("out"), widths[0], cfg.channels, 3, 1, 1)?;
        Ok(Self { ups, out })
    }

    /// `(N, D, H, W)` -> `(N, C, I, I)` in `[0, 1]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for u in &self.ups {
            h = u.forward(&h)?;
        }
        nn::sigmoid(&self.out.forward(&h)?)
    }
}

/// Encoder outputs for one clip, `(L, H * W, D)`.
#[derive(Debug, Clone)]
pub struct FeatureClip {
    features: Tensor,
    grid: usize,
}

impl FeatureClip {
    pub fn new(features: Tensor, grid: usize) -> Result<Self> {
        let (_, n, _) = features.dims3()?;
        if n != grid * grid {
            return Err(Error::ShapeMismatch(format!(
                "{n} tokens do not form a {grid}x{grid} grid"
            )));
        }
        Ok(Self { features, grid })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// `(L, H, W, D)` view for inspection.
    pub fn to_grid_tensor(&self) -> Result<Tensor> {
        let (l, _, d) = self.features.dims3()?;
        Ok(self.features.reshape((l, self.grid, self.grid, d))?)
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    image_size: usize,
    channels: usize,
    grid: usize,
    dim: usize,
    pub encoder: FrameEncoder,
    pub decoder: FrameDecoder,
}

impl Autoencoder {
    pub fn new(mut vs: Scope<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            image_size: cfg.image_size,
            channels: cfg.channels,
            grid: cfg.grid(),
            dim: cfg.feature_dim,
            encoder: FrameEncoder::new(vs.pp("enc"), cfg)?,
            decoder: FrameDecoder::new(vs.pp("dec"), cfg)?,
        })
    }

    /// Frames `(N, C, I, I)` -> features `(N, H * W, D)`.
    pub fn encode(&self, frames: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = frames.dims4()?;
        if (c, h, w) != (self.channels, self.image_size, self.image_size) {
            return Err(Error::ShapeMismatch(format!(
                "frames are {c}x{h}x{w}, autoencoder expects {}x{}x{}",
                self.channels, self.image_size, self.image_size
            )));
        }
        let f = self.encoder.forward(frames)?;
        Ok(f.reshape((n, self.dim, self.grid * self.grid))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    /// Features `(N, H * W, D)` -> frames `(N, C, I, I)`.
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        let (n, tokens, d) = features.dims3()?;
        if tokens != self.grid * self.grid || d != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "features are {tokens}x{d}, decoder expects {}x{}",
                self.grid * self.grid,
                self.dim
            )));
        }
        let x = features
            .transpose(1, 2)?
            .contiguous()?
            .reshape((n, d, self.grid, self.grid))?;
        self.decoder.forward(&x)
    }

    /// Encode `L x I x I x C` frames, each independently.
    pub fn encode_frames(
        &self,
        frames: &Array4<f32>,
        dtype: DType,
        device: &Device,
    ) -> Result<FeatureClip> {
        let x = frames_to_tensor(frames, dtype, device)?;
        FeatureClip::new(self.encode(&x)?, self.grid)
    }

    pub fn decode_features(&self, features: &FeatureClip) -> Result<Array4<f32>> {
        if features.grid() != self.grid {
            return Err(Error::ShapeMismatch(format!(
                "feature grid {} vs decoder grid {}",
                features.grid(),
                self.grid
            )));
        }
        tensor_to_frames(&self.decode(features.tensor())?)
    }
}

/// `L x H x W x C` array -> `(L, C, H, W)` tensor.
pub fn frames_to_tensor(frames: &Array4<f32>, dtype: DType, device: &Device) -> Result<Tensor> {
    let (l, h, w, c) = frames.dim();
    let data: Vec<f32> = frames.iter().copied().collect();
    Ok(Tensor::from_vec(data, (l, h, w, c), device)?
        .permute((0, 3, 1, 2))?
        .contiguous()?
        .to_dtype(dtype)?)
}

/// `(L, C, H, W)` tensor -> `L x H x W x C` array.
pub fn tensor_to_frames(t: &Tensor) -> Result<Array4<f32>> {
    let (l, c, h, w) = t.dims4()?;
    let data: Vec<f32> = t
        .permute((0, 2, 3, 1))?
        .contiguous()?
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1()?;
    Ok(Array4::from_shape_vec((l, h, w, c), data).expect("shape matches element count"))
}

/// Mean absolute reconstruction error.
pub fn ae_reconstruction_loss(frames: &Tensor, recon: &Tensor) -> Result<Tensor> {
    nn::mean_abs_diff(frames, recon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::VarStore;

    fn toy_ae(cfg: &ModelConfig, dtype: DType) -> (VarStore, Autoencoder) {
        let mut vs = VarStore::new(dtype, 0);
        let ae = Autoencoder::new(vs.root().pp("ae"), cfg).unwrap();
        (vs, ae)
    }

    #[test]
    fn fresh_nonlocal_is_identity() {
        let mut vs = VarStore::new(DType::F32, 0);
        let nl = NonLocalAttention::new(vs.root().pp("nl"), 16).unwrap();
        let x = Tensor::randn(0f32, 1.0, (2, 16, 3, 5), &Device::Cpu).unwrap();
        let y = nl.forward(&x).unwrap();
        assert_eq!(y.dims(), x.dims());
        let diff: f32 = (y - &x)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar()
            .unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn nonlocal_on_constant_map() {
        // 2x2 constant map: attention is uniform, so every output position gets
        // exactly the value projection of the constant.
        let mut vs = VarStore::new(DType::F64, 5);
        let nl = NonLocalAttention::new(vs.root().pp("nl"), 8).unwrap();
        nl.gate()
            .set(&Tensor::new(&[0.7f64], &Device::Cpu).unwrap())
            .unwrap();
        let cvec: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
        let x = Tensor::from_vec(cvec.clone(), (1, 8, 1, 1), &Device::Cpu)
            .unwrap()
            .repeat((1, 1, 2, 2))
            .unwrap();
        let attn: Vec<Vec<Vec<f64>>> = nl.attention(&x).unwrap().to_vec3().unwrap();
        for row in &attn[0] {
            for a in row {
                assert!((a - 0.25).abs() < 1e-12);
            }
        }
        // hand evaluation of W_v c + b_v
        let w: Vec<Vec<f64>> = vs
            .get("nl.value.weight")
            .unwrap()
            .reshape((8, 8))
            .unwrap()
            .to_vec2()
            .unwrap();
        let b: Vec<f64> = vs.get("nl.value.bias").unwrap().to_vec1().unwrap();
        let y: Vec<f64> = nl
            .forward(&x)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        for ch in 0..8 {
            let v: f64 = (0..8).map(|k| w[ch][k] * cvec[k]).sum::<f64>() + b[ch];
            for p in 0..4 {
                let expect = cvec[ch] + 0.7 * v;
                assert!((y[ch * 4 + p] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_geometry() {
        let (_, ae) = toy_ae(&ModelConfig::toy(), DType::F32);
        let frames = Array4::<f32>::zeros((3, 32, 32, 1));
        let f = ae.encode_frames(&frames, DType::F32, &Device::Cpu).unwrap();
        assert_eq!(f.tensor().dims(), &[3, 16, 64]);
        let back = ae.decode_features(&f).unwrap();
        assert_eq!(back.dim(), (3, 32, 32, 1));
    }

    #[test]
    fn full_resolutions_reach_8x8() {
        for (size, downs) in [(64usize, 3usize), (128, 4)] {
            let cfg = ModelConfig {
                image_size: size,
                down_blocks: downs,
                feature_dim: 16,
                res_blocks: 1,
                heads: 1,
                ..ModelConfig::toy()
            };
            let (_, ae) = toy_ae(&cfg, DType::F32);
            let x = Tensor::zeros((1, 1, size, size), DType::F32, &Device::Cpu).unwrap();
            let enc = ae.encoder.forward(&x).unwrap();
            assert_eq!(enc.dims(), &[1, 16, 8, 8]);
        }
    }

    #[test]
    fn decoder_shape_and_range() {
        let cfg = ModelConfig {
            image_size: 64,
            down_blocks: 3,
            feature_dim: 64,
            ..ModelConfig::toy()
        };
        let (_, ae) = toy_ae(&cfg, DType::F32);
        let feats = (Tensor::randn(0f32, 1.0, (5, 64, 64), &Device::Cpu).unwrap() * 50.0).unwrap();
        let frames = ae.decode(&feats).unwrap();
        assert_eq!(frames.dims(), &[5, 1, 64, 64]);
        let lo: f32 = frames.min_all().unwrap().to_scalar().unwrap();
        let hi: f32 = frames.max_all().unwrap().to_scalar().unwrap();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn resolution_mismatch_rejected() {
        let (_, ae) = toy_ae(&ModelConfig::toy(), DType::F32);
        let frames = Array4::<f32>::zeros((1, 64, 64, 1));
        assert!(ae.encode_frames(&frames, DType::F32, &Device::Cpu).is_err());
    }

    #[test]
    fn reconstruction_loss_values() {
        let a = Tensor::new(&[[0.2f64, 0.4], [0.6, 0.0]], &Device::Cpu).unwrap();
        let b = (&a + 0.1).unwrap();
        let l0: f64 = ae_reconstruction_loss(&a, &a).unwrap().to_scalar().unwrap();
        let l1: f64 = ae_reconstruction_loss(&a, &b).unwrap().to_scalar().unwrap();
        let l2: f64 = ae_reconstruction_loss(&b, &a).unwrap().to_scalar().unwrap();
        assert_eq!(l0, 0.0);
        assert!((l1 - 0.1).abs() < 1e-12);
        assert_eq!(l1, l2);
        let c = Tensor::zeros((3,), DType::F64, &Device::Cpu).unwrap();
        assert!(ae_reconstruction_loss(&a, &c).is_err());
    }
}
