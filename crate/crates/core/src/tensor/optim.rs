use crate::error::{Error, Result};

use super::ensure_finite;

/// Moment estimates and hyper-parameters for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub t: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamState {
    /// Zeroed moments with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(len: usize, lr: f32) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::dim("adam", "gradient length", params.len(), grads.len()));
    }
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::dim("adam", "state length", params.len(), state.m.len()));
    }
    ensure_finite(grads, "adam gradient")?;
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = (1.0 - (b1 as f64).powi(t)) as f32;
    let c2 = (1.0 - (b2 as f64).powi(t)) as f32;
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// `lambda · Σp²` and its gradient `2 · lambda · p`.
pub fn l2_penalty(params: &[f32], lambda: f32) -> (f64, Vec<f32>) {
    let penalty = lambda as f64 * params.iter().map(|&p| p as f64 * p as f64).sum::<f64>();
    let grad = params.iter().map(|&p| 2.0 * lambda * p).collect();
    (penalty, grad)
}

/// Adds the L2 gradient into `grads` in place and returns the penalty.
pub fn add_l2_gradient(params: &[f32], grads: &mut [f32], lambda: f32) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    for (g, &p) in grads.iter_mut().zip(params) {
        *g += 2.0 * lambda * p;
    }
    lambda as f64 * params.iter().map(|&p| p as f64 * p as f64).sum::<f64>()
}
