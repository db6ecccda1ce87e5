use serde::{Deserialize, Serialize};

use super::MlpParams;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: MlpParams,
    pub second_moment: MlpParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, like: &MlpParams) -> Self {
        Self {
            config,
            first_moment: like.zeros_like(),
            second_moment: like.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grad: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grad) || !params.same_shape(&state.first_moment) {
        return Err(Error::Argument("adam: parameter and gradient shapes differ".into()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    if lr <= 0.0 {
        return Err(Error::Argument(format!("adam: learning rate must be positive, got {lr}")));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let tensors = params
        .tensors_mut()
        .zip(grad.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
