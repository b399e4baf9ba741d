//! Adam with bias correction, plus the inverse-square-root warmup
//! schedule used for the cross-entropy phase.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment accumulators, one pair per parameter, plus the
/// shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.numel()]).collect(),
        }
    }
}

/// One bias-corrected update in place, reading each parameter's
/// accumulated gradient.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (idx, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[idx], &mut state.v[idx]);
        for j in 0..p.value.numel() {
            let g = p.grad.data[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p.value.data[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// model_dim^(−1/2) · min(step^(−1/2), step · warmup^(−3/2)).
pub fn noam_lr(step: u64, model_dim: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Contract("noam_lr needs step ≥ 1".into()));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((model_dim as f64).powf(-0.5) * f64::min(s.powf(-0.5), s * w.powf(-1.5)))
}

/// Global-norm clipping over all gradients; returns the applied scale
/// (1.0 when already under the threshold).
pub fn clip_gradients(params: &mut ParamSet, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip threshold must be positive");
    let norm = params.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let scale = max_norm / norm;
    for p in params.iter_mut() {
        for g in &mut p.grad.data {
            *g *= scale;
        }
    }
    scale
}
