//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;
use crate::nn::scalar::Scalar;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers per parameter tensor, plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    pub cfg: AdamConfig,
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>, cfg: AdamConfig) -> Self {
        AdamState {
            cfg,
            step: 0,
            m: params.tensors.iter().map(|t| vec![S::zero(); t.data.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![S::zero(); t.data.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamSet<S>,
    state: &mut AdamState<S>,
) -> Result<()> {
    if params.tensors.len() != grads.tensors.len() || params.tensors.len() != state.m.len() {
        return Err(Error::dimension("optimizer state does not match parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = S::from_f64(state.cfg.beta1);
    let b2 = S::from_f64(state.cfg.beta2);
    let one = S::one();
    let bc1 = S::from_f64(1.0 - state.cfg.beta1.powi(t));
    let bc2 = S::from_f64(1.0 - state.cfg.beta2.powi(t));
    let lr = S::from_f64(state.cfg.lr);
    let eps = S::from_f64(state.cfg.eps);
    for ((p, g), (m, v)) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if p.data.len() != g.data.len() {
            return Err(Error::dimension(format!("gradient shape mismatch at {}", p.desc.path)));
        }
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.data[i] = p.data[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
