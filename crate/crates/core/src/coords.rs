//! Spatio-temporal coordinate grids and their Fourier-feature encodings.
//!
//! Each feature location `(h, w, t)` is normalized to `[0, 1]` and mapped to a
//! `D`-dimensional encoding that serves as the transformer's positional signal.
//! Because the encoder is a smooth function of `t`, any real-valued time inside
//! the training window has a well-defined encoding.

use std::f64::consts::TAU;

use candle_core::{DType, Device, Tensor, Var};
use ndarray::Array4;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Scope};

/// Normalized `(h, w, t)` for every location of an `L x H x W` feature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    coords: Array4<f64>,
}

impl CoordGrid {
    /// `L x H x W x 3`.
    pub fn coords(&self) -> &Array4<f64> {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.dim().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(L * H * W, 3)` tensor in row-major location order.
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        let (l, h, w, _) = self.coords.dim();
        let flat: Vec<f64> = self.coords.iter().copied().collect();
        Ok(Tensor::from_vec(flat, (l * h * w, 3), device)?.to_dtype(dtype)?)
    }
}

/// Build the coordinate grid for `query_times` (raw units) inside a window of
/// `window_len` frames. Times past the window are not clamped.
pub fn make_coord_grid(
    window_len: usize,
    query_times: &[f64],
    height: usize,
    width: usize,
) -> Result<CoordGrid> {
    if query_times.is_empty() {
        return Err(Error::Request("query_times is empty".into()));
    }
    if window_len < 2 || height == 0 || width == 0 {
        return Err(Error::InvalidDimensions(format!(
            "window {window_len}, grid {height}x{width}"
        )));
    }
    let norm = |i: usize, n: usize| {
        if n > 1 {
            i as f64 / (n - 1) as f64
        } else {
            0.0
        }
    };
    let t_scale = (window_len - 1) as f64;
    let coords = Array4::from_shape_fn(
        (query_times.len(), height, width, 3),
        |(l, h, w, k)| match k {
            0 => norm(h, height),
            1 => norm(w, width),
            _ => query_times[l] / t_scale,
        },
    );
    Ok(CoordGrid { coords })
}

/// `[cos(2 pi B v); sin(2 pi B v)]` for one coordinate vector.
pub fn fourier_features(v: [f64; 3], basis: &[[f64; 3]]) -> Vec<f64> {
    let proj: Vec<f64> = basis
        .iter()
        .map(|row| TAU * (row[0] * v[0] + row[1] * v[1] + row[2] * v[2]))
        .collect();
    proj.iter()
        .map(|p| p.cos())
        .chain(proj.iter().map(|p| p.sin()))
        .collect()
}

/// Fourier feature network: fixed Gaussian projection followed by a ReLU MLP.
#[derive(Debug, Clone)]
pub struct FourierFeatureNetwork {
    /// `m x 3`, drawn once and never updated.
    basis: Var,
    hidden0: Linear,
    hidden1: Linear,
    out: Linear,
}

impl FourierFeatureNetwork {
    pub fn new(mut vs: Scope<'_>, features: usize, scale: f64, dim: usize) -> Result<Self> {
        let basis = vs.var(BASIS_NAME, &[features, 3], Init::Normal(scale))?;
        Ok(Self {
            basis,
            hidden0: Linear::new(vs.pp("hidden0"), 2 * features, dim)?,
            hidden1: Linear::new(vs.pp("hidden1"), dim, dim)?,
            out: Linear::new(vs.pp("out"), dim, dim)?,
        })
    }

    pub fn basis(&self) -> &Var {
        &self.basis
    }

    /// Fourier features of `(N, 3)` coordinates, `(N, 2m)`.
    pub fn features(&self, coords: &Tensor) -> Result<Tensor> {
        let proj = (coords.matmul(&self.basis.as_tensor().detach().t()?)? * TAU)?;
        Ok(Tensor::cat(&[proj.cos()?, proj.sin()?], 1)?)
    }

    pub fn forward(&self, coords: &Tensor) -> Result<Tensor> {
        let f = self.features(coords)?;
        let h = self.hidden0.forward(&f)?.relu()?;
        let h = self.hidden1.forward(&h)?.relu()?;
        self.out.forward(&h)
    }
}

/// Name of the frozen projection matrix inside the `ffn` scope.
pub const BASIS_NAME: &str = "basis";

/// Coordinate encoder: the Fourier feature network, or a plain linear map of
/// raw coordinates for ablations without the implicit representation.
#[derive(Debug, Clone)]
pub enum CoordEncoder {
    Fourier(FourierFeatureNetwork),
    Linear(Linear),
}

impl CoordEncoder {
    pub fn new(
        mut vs: Scope<'_>,
        use_inr: bool,
        features: usize,
        scale: f64,
        dim: usize,
    ) -> Result<Self> {
        if use_inr {
            Ok(CoordEncoder::Fourier(FourierFeatureNetwork::new(
                vs, features, scale, dim,
            )?))
        } else {
            Ok(CoordEncoder::Linear(Linear::new(vs.pp("raw"), 3, dim)?))
        }
    }

    /// Encode a grid into `(L, H * W, D)`.
    pub fn encode(&self, grid: &CoordGrid, dtype: DType, device: &Device) -> Result<Tensor> {
        let (l, h, w, _) = grid.coords().dim();
        let coords = grid.to_tensor(dtype, device)?;
        let enc = match self {
            CoordEncoder::Fourier(f) => f.forward(&coords)?,
            CoordEncoder::Linear(lin) => lin.forward(&coords)?,
        };
        let d = enc.dim(1)?;
        Ok(enc.reshape((l, h * w, d))?)
    }

    pub fn basis(&self) -> Option<&Var> {
        match self {
            CoordEncoder::Fourier(f) => Some(f.basis()),
            CoordEncoder::Linear(_) => None,
        }
    }
}
