//! Adam / AdamW with per-parameter weight decay and exportable state.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Slot {
    name: String,
    var: Var,
    weight_decay: f64,
    m: Tensor,
    v: Tensor,
    steps: u64,
}

/// Adam with decoupled weight decay. A parameter with zero decay is plain Adam.
pub struct AdamW {
    cfg: AdamConfig,
    slots: Vec<Slot>,
}

/// Serializable moment state for one parameter.
pub struct SlotState {
    pub name: String,
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

impl AdamW {
    /// `params`: (name, variable, weight decay).
    pub fn new(params: Vec<(String, Var, f64)>, cfg: AdamConfig) -> Result<Self> {
        let slots = params
            .into_iter()
            .map(|(name, var, weight_decay)| {
                let m = var.zeros_like()?;
                let v = var.zeros_like()?;
                Ok(Slot {
                    name,
                    var,
                    weight_decay,
                    m,
                    v,
                    steps: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cfg, slots })
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|s| s.name.as_str())
    }

    /// Pull this optimizer's gradients out of a backward pass.
    pub fn collect_grads(&self, store: &GradStore) -> Grads {
        self.slots
            .iter()
            .filter_map(|s| store.get(&s.var).map(|g| (s.name.clone(), g.detach())))
            .collect()
    }

    /// Apply one update. Parameters without a gradient are left untouched.
    pub fn step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        for slot in &mut self.slots {
            let Some(g) = grads.get(&slot.name) else {
                continue;
            };
            slot.steps += 1;
            let t = slot.steps as i32;
            let g = g.detach();
            slot.m = ((&slot.m * beta1)? + (&g * (1.0 - beta1))?)?.detach();
            slot.v = ((&slot.v * beta2)? + (g.sqr()? * (1.0 - beta2))?)?.detach();
            let m_hat = (&slot.m / (1.0 - beta1.powi(t)))?;
            let v_hat = (&slot.v / (1.0 - beta2.powi(t)))?;
            let update = (m_hat / (v_hat.sqrt()? + eps)?)?;
            let mut theta = slot.var.as_tensor().detach();
            if slot.weight_decay > 0.0 {
                theta = (&theta * (1.0 - lr * slot.weight_decay))?;
            }
            let next = (theta - (update * lr)?)?.detach();
            slot.var.set(&next)?;
        }
        Ok(())
    }

    pub fn export_state(&self) -> Vec<SlotState> {
        self.slots
            .iter()
            .map(|s| SlotState {
                name: s.name.clone(),
                m: s.m.clone(),
                v: s.v.clone(),
                steps: s.steps,
            })
            .collect()
    }

    pub fn import_state(&mut self, state: Vec<SlotState>) -> Result<()> {
        let mut by_name: BTreeMap<String, SlotState> =
            state.into_iter().map(|s| (s.name.clone(), s)).collect();
        for slot in &mut self.slots {
            if let Some(s) = by_name.remove(&slot.name) {
                if s.m.dims() != slot.var.dims() {
                    return Err(crate::Error::ShapeMismatch(format!(
                        "optimizer state for {} has shape {:?}, parameter has {:?}",
                        slot.name,
                        s.m.dims(),
                        slot.var.dims()
                    )));
                }
                slot.m = s.m.to_dtype(slot.var.dtype())?;
                slot.v = s.v.to_dtype(slot.var.dtype())?;
                slot.steps = s.steps;
            }
        }
        Ok(())
    }
}

/// Global L2 norm over the gradients whose names start with one of `prefixes`.
pub fn group_norm(grads: &Grads, prefixes: &[&str]) -> Result<f64> {
    let mut total = 0.0f64;
    for (name, g) in grads {
        if prefixes.iter().any(|p| name.starts_with(p)) {
            total += g
                .to_dtype(candle_core::DType::F64)?
                .sqr()?
                .sum_all()?
                .to_scalar::<f64>()?;
        }
    }
    Ok(total.sqrt())
}

/// Rescale the gradients of the selected groups so their joint norm is at most
/// `max_norm`. Other gradients are untouched. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut Grads, prefixes: &[&str], max_norm: f64) -> Result<f64> {
    let norm = group_norm(grads, prefixes)?;
    if norm > max_norm {
        let scale = max_norm / norm;
        for (name, g) in grads.iter_mut() {
            if prefixes.iter().any(|p| name.starts_with(p)) {
                *g = (&*g * scale)?;
            }
        }
    }
    Ok(norm)
}
