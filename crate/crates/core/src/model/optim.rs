use super::ModelParams;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

pub fn global_norm(grads: &ModelParams) -> f64 {
    grads.values().iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `cap`. Returns the
/// norm before clipping.
pub fn clip_gradient_norm(grads: &mut ModelParams, cap: f64) -> f64 {
    assert!(cap > 0.0, "gradient-norm cap must be positive");
    let norm = global_norm(grads);
    if norm > cap {
        let s = cap / norm;
        grads.values_mut().iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "params {}, grads {}, optimizer state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let c1 = 1.0 - BETA1.powi(state.step as i32);
    let c2 = 1.0 - BETA2.powi(state.step as i32);
    let values = params.values_mut();
    for (k, &g) in grads.values().iter().enumerate() {
        let m = BETA1 * state.m[k] + (1.0 - BETA1) * g;
        let v = BETA2 * state.v[k] + (1.0 - BETA2) * g * g;
        state.m[k] = m;
        state.v[k] = v;
        values[k] -= lr * (m / c1) / ((v / c2).sqrt() + EPSILON);
    }
    Ok(())
}
