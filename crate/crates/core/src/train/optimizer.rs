use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    /// Updates applied so far.
    pub step: u64,
}

impl AdamMoments {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
///
/// ```text
/// p ← p·(1 − lr·wd)
/// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
/// p ← p − lr · m̂ / (√v̂ + eps)
/// ```
pub fn adamw_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut AdamMoments,
    config: &AdamWConfig,
) -> Result<(), TrainError> {
    if param.dims() != grad.dims() || state.m.len() != param.numel() || state.v.len() != param.numel() {
        return Err(TrainError::ShapeMismatch { param: param.dims().to_vec(), grad: grad.dims().to_vec() });
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);
    let decay = 1.0 - config.learning_rate * config.weight_decay;
    let (m, v) = (&mut state.m, &mut state.v);
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = m[i] / correction1;
        let v_hat = v[i] / correction2;
        *p = *p * decay - config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}
