//! Adam optimizer with bias correction, operating blockwise over the model's
//! parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Gradient, ModelParams, Tensors};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive and finite, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Tensors,
    pub v: Tensors,
    pub t: u64,
}

impl AdamState {
    pub fn new(vocab_size: usize, dim: usize) -> AdamState {
        AdamState {
            m: Tensors::zeros(vocab_size, dim),
            v: Tensors::zeros(vocab_size, dim),
            t: 0,
        }
    }
}

/// One Adam update:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected
/// `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`, then
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
/// Rejects non-finite gradients.
pub fn adam_step(
    params: &mut ModelParams,
    grad: &Gradient,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !grad.all_finite() {
        return Err(Error::Train(
            "non-finite gradient reached the optimizer".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let theta = params.t.blocks_mut();
    let g = grad.blocks();
    let m = state.m.blocks_mut();
    let v = state.v.blocks_mut();
    for ((((_, th), (_, gb)), (_, mb)), (_, vb)) in
        theta.into_iter().zip(g).zip(m).zip(v)
    {
        for i in 0..th.len() {
            let gi = gb[i];
            mb[i] = cfg.beta1 * mb[i] + (1.0 - cfg.beta1) * gi;
            vb[i] = cfg.beta2 * vb[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = mb[i] / bc1;
            let v_hat = vb[i] / bc2;
            th[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
