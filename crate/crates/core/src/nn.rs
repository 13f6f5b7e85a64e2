//! Minimal layer toolkit on top of `candle_core`.
//!
//! Parameters live in a [`VarStore`] keyed by dotted names. Initialization draws
//! from a seeded ChaCha stream so that a `(config, seed)` pair always yields the
//! same weights, independent of the host RNG.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

/// Named collection of trainable variables.
pub struct VarStore {
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
    vars: BTreeMap<String, Var>,
}

impl VarStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&mut self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Variables whose names start with any of `prefixes`, in name order.
    pub fn with_prefixes(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    fn create(&mut self, name: String, shape: &[usize], init: Init) -> Result<Var> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform(bound) => (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Draw a fixed (non-trainable) tensor from the init stream.
    fn constant(&mut self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f64> = match init {
            Init::Uniform(bound) => (0..n).map(|_| self.rng.gen_range(-bound..=bound)).collect(),
            Init::Normal(std) => (0..n)
                .map(|_| std * self.rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::Const(c) => vec![c; n],
        };
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }
}

/// A prefixed view into a [`VarStore`].
pub struct Scope<'a> {
    store: &'a mut VarStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn pp(&mut self, name: impl AsRef<str>) -> Scope<'_> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.create(full, shape, init)
    }

    pub fn constant(&mut self, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.constant(shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }
}

/// Standard-normal tensor drawn from an explicit RNG stream.
pub fn standard_normal(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}

pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

/// `log(1 + exp(x))`, stable for large |x|.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(mut vs: Scope<'_>, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = vs.var("weight", &[out_dim, in_dim], Init::Uniform(bound))?;
        let bias = vs.var("bias", &[out_dim], Init::Uniform(bound))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let in_dim = *dims.last().expect("linear input has at least one dim");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, in_dim))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out)?)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        mut vs: Scope<'_>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((in_ch * kernel * kernel) as f64).sqrt();
        let weight = vs.var(
            "weight",
            &[out_ch, in_ch, kernel, kernel],
            Init::Uniform(bound),
        )?;
        let bias = vs.var("bias", &[out_ch], Init::Uniform(bound))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// `x`: (N, C, H, W).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let b = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        mut vs: Scope<'_>,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((out_ch * kernel * kernel) as f64).sqrt();
        let weight = vs.var(
            "weight",
            &[in_ch, out_ch, kernel, kernel],
            Init::Uniform(bound),
        )?;
        let bias = vs.var("bias", &[out_ch], Init::Uniform(bound))?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(&self.weight, self.padding, 0, self.stride, 1)?;
        let b = self.bias.reshape((1, self.bias.dim(0)?, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Normalization over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    scale: Var,
    shift: Var,
    eps: f64,
}

impl LayerNorm {
    pub fn new(mut vs: Scope<'_>, dim: usize) -> Result<Self> {
        Ok(Self {
            scale: vs.var("scale", &[dim], Init::Const(1.0))?,
            shift: vs.var("shift", &[dim], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.scale)?.broadcast_add(&self.shift)?)
    }
}

/// Per-sample, per-channel normalization over spatial positions of an NCHW map.
#[derive(Debug, Clone)]
pub struct InstanceNorm2d {
    scale: Var,
    shift: Var,
    eps: f64,
}

impl InstanceNorm2d {
    pub fn new(mut vs: Scope<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            scale: vs.var("scale", &[channels], Init::Const(1.0))?,
            shift: vs.var("shift", &[channels], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        let flat = x.reshape((n, c, h * w))?;
        let mean = flat.mean_keepdim(D::Minus1)?;
        let xc = flat.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc
            .broadcast_div(&(var + self.eps)?.sqrt()?)?
            .reshape((n, c, h, w))?;
        let scale = self.scale.reshape((1, c, 1, 1))?;
        let shift = self.shift.reshape((1, c, 1, 1))?;
        Ok(xn.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Per-location normalization across channels of an NCHW map.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    scale: Var,
    shift: Var,
    eps: f64,
}

impl ChannelNorm {
    pub fn new(mut vs: Scope<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            scale: vs.var("scale", &[channels], Init::Const(1.0))?,
            shift: vs.var("shift", &[channels], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        let mean = x.mean_keepdim(1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let scale = self.scale.reshape((1, c, 1, 1))?;
        let shift = self.shift.reshape((1, c, 1, 1))?;
        Ok(xn.broadcast_mul(&scale)?.broadcast_add(&shift)?)
    }
}

/// Multi-head scaled dot-product attention without masking.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(mut vs: Scope<'_>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(crate::Error::InvalidDimensions(format!(
                "feature width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(vs.pp("q"), dim, dim)?,
            k: Linear::new(vs.pp("k"), dim, dim)?,
            v: Linear::new(vs.pp("v"), dim, dim)?,
            o: Linear::new(vs.pp("o"), dim, dim)?,
            heads,
        })
    }

    /// `query`: (B, Lq, D); `key`, `value`: (B, Lk, D).
    pub fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<Tensor> {
        let (b, lq, d) = query.dims3()?;
        let lk = key.dim(1)?;
        let dh = d / self.heads;
        let split = |t: Tensor, len: usize| -> Result<Tensor> {
            Ok(t.reshape((b, len, self.heads, dh))?
                .transpose(1, 2)?
                .contiguous()?)
        };
        let q = split(self.q.forward(query)?, lq)?;
        let k = split(self.k.forward(key)?, lk)?;
        let v = split(self.v.forward(value)?, lk)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dh as f64).sqrt())?;
        let attn = softmax_last(&scores)?;
        let out = attn
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, lq, d))?;
        self.o.forward(&out)
    }
}

/// Two-layer position-wise MLP.
#[derive(Debug, Clone)]
pub struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    pub fn new(mut vs: Scope<'_>, dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            up: Linear::new(vs.pp("up"), dim, hidden)?,
            down: Linear::new(vs.pp("down"), hidden, dim)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.down.forward(&self.up.forward(x)?.relu()?)
    }
}

/// Mean absolute difference.
pub fn mean_abs_diff(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(crate::Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}
