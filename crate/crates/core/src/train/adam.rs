use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.leaves().iter().map(|t| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based):
///
/// ```text
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// p ← p − lr · m̂ / (√v̂ + ε),  m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
/// ```
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, t: u64, cfg: &AdamConfig) -> Result<()> {
    if t == 0 {
        return Err(Error::Usage("adam step count starts at 1".into()));
    }
    let mut leaves = params.leaves_mut();
    let grad_leaves = grads.leaves();
    if leaves.len() != grad_leaves.len() || leaves.len() != state.m.len() || leaves.len() != state.v.len() {
        return Err(Error::Usage(format!(
            "adam: {} parameter tensors, {} gradients, {} moment buffers",
            leaves.len(),
            grad_leaves.len(),
            state.m.len()
        )));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (i, (p, g)) in leaves.iter_mut().zip(&grad_leaves).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        if p.shape() != g.shape() || m.len() != p.numel() || v.len() != p.numel() {
            return Err(Error::Usage(format!(
                "adam: shape mismatch for tensor {i}: parameter {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let data = p.data_mut();
        for j in 0..data.len() {
            let gj = g.data()[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
