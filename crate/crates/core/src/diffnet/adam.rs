use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    /// Classic L2 decay: `weight_decay · θ` is added to the gradient.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, weight_decay: 4e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    first: Gradients<T>,
    second: Gradients<T>,
    t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(params),
            second: Gradients::zeros_like(params),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &Gradients<T> {
        &self.first
    }

    pub fn second_moment(&self) -> &Gradients<T> {
        &self.second
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Nothing is modified when a gradient component is non-finite; the error
/// names the offending array.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    if !grads.congruent_with(params) || !state.first.congruent_with(params) {
        return Err(Error::Usage("parameters, gradients and optimizer state are not congruent".into()));
    }
    if let Some(bad) = grads.arrays().iter().find(|a| a.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite gradient in parameter array {}", bad.name)));
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let bc1 = T::of(1.0 - c.beta1.powf(state.t as f64));
    let bc2 = T::of(1.0 - c.beta2.powf(state.t as f64));
    let (lr, wd, eps) = (T::of(c.lr), T::of(c.weight_decay), T::of(c.eps));

    for (idx, p) in params.arrays_mut().iter_mut().enumerate() {
        let g = &grads.arrays()[idx].data;
        let m = state.first.array_mut(idx);
        for ((theta, &gi), mi) in p.data.iter_mut().zip(g).zip(m.iter_mut()) {
            let geff = gi + wd * *theta;
            *mi = b1 * *mi + one_b1 * geff;
        }
        let m = &state.first.arrays()[idx].data;
        let v = state.second.array_mut(idx);
        for (((theta, &gi), vi), &mi) in p.data.iter_mut().zip(g).zip(v.iter_mut()).zip(m) {
            let geff = gi + wd * *theta;
            *vi = b2 * *vi + one_b2 * geff * geff;
            let m_hat = mi / bc1;
            let v_hat = *vi / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
