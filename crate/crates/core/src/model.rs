//! The assembled model: autoencoder, coordinate encoder and predictor sharing
//! one parameter store.

use candle_core::{DType, Device, Tensor};

use crate::autoencoder::Autoencoder;
use crate::config::ModelConfig;
use crate::coords::{make_coord_grid, CoordEncoder};
use crate::error::{Error, Result};
use crate::nn::VarStore;
use crate::predictor::{EventMode, Predictor, PredictorOutput};

pub const AE_PREFIX: &str = "ae.";
pub const COORD_PREFIX: &str = "ffn.";
/// Name of the frozen Fourier projection inside the store.
pub const BASIS_VAR: &str = "ffn.basis";

pub struct Npvp {
    config: ModelConfig,
    vs: VarStore,
    pub autoencoder: Autoencoder,
    pub coords: CoordEncoder,
    pub predictor: Predictor,
}

impl Npvp {
    /// Fresh model with weights drawn from `seed`.
    pub fn new(config: ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut vs = VarStore::new(dtype, seed);
        let autoencoder = Autoencoder::new(vs.root().pp("ae"), &config)?;
        let coords = CoordEncoder::new(
            vs.root().pp("ffn"),
            config.use_inr,
            config.fourier_features,
            config.fourier_scale,
            config.feature_dim,
        )?;
        let predictor = Predictor::new(vs.root(), &config)?;
        Ok(Self {
            config,
            vs,
            autoencoder,
            coords,
            predictor,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn var_store(&self) -> &VarStore {
        &self.vs
    }

    pub fn dtype(&self) -> DType {
        self.vs.dtype()
    }

    pub fn device(&self) -> &Device {
        self.vs.device()
    }

    /// Overwrite every variable whose name starts with one of `prefixes` with
    /// the same-named variable of `other`.
    pub fn copy_from(&self, other: &Npvp, prefixes: &[&str]) -> Result<usize> {
        let mut n = 0;
        for (name, var) in self.vs.with_prefixes(prefixes) {
            let src = other
                .vs
                .get(&name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing parameter {name}")))?;
            if src.dims() != var.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "{name}: {:?} vs {:?}",
                    src.dims(),
                    var.dims()
                )));
            }
            var.set(&src.as_tensor().to_dtype(var.dtype())?)?;
            n += 1;
        }
        Ok(n)
    }

    /// Coordinate encodings `(L, H * W, D)` for raw window times.
    pub fn encode_times(&self, times: &[f64]) -> Result<Tensor> {
        let g = self.config.grid();
        let grid = make_coord_grid(self.config.window_len, times, g, g)?;
        self.coords.encode(&grid, self.dtype(), self.device())
    }

    /// Frames `(N, C, I, I)` -> detached features `(N, H * W, D)`.
    pub fn encode_frames_detached(&self, frames: &Tensor) -> Result<Tensor> {
        Ok(self.autoencoder.encode(frames)?.detach())
    }

    /// Predict target features for a batch of context features `(B, L_C, N, D)`.
    pub fn forward(
        &self,
        context_times: &[f64],
        y_c: &Tensor,
        target_times: &[f64],
        mode: &EventMode,
        y_t: Option<&Tensor>,
    ) -> Result<PredictorOutput> {
        let l_c = y_c.dim(1)?;
        if context_times.len() != l_c {
            return Err(Error::ShapeMismatch(format!(
                "{} context times for {l_c} context frames",
                context_times.len()
            )));
        }
        let x_c = self.encode_times(context_times)?;
        let x_t = self.encode_times(target_times)?;
        self.predictor.predict_features(&x_c, y_c, &x_t, mode, y_t)
    }

    /// Decode predicted features `(B, L_T, N, D)` into frames `(B * L_T, C, I, I)`.
    pub fn decode_batch(&self, y_hat: &Tensor) -> Result<Tensor> {
        let (b, l, n, d) = y_hat.dims4()?;
        self.autoencoder.decode(&y_hat.reshape((b * l, n, d))?)
    }
}
