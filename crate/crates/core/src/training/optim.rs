//! Global-norm gradient clipping and AdamW.

use crate::probe::ProbeParams;

/// Anything exposing its parameters as a fixed sequence of flat slices.
pub trait ParamSet {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;
}

impl ParamSet for ProbeParams {
    fn param_slices(&self) -> Vec<&[f64]> {
        self.slices()
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.slices_mut()
    }
}

pub fn global_norm(grads: &impl ParamSet) -> f64 {
    let mut sq = 0.0;
    for s in grads.param_slices() {
        for x in s {
            sq += x * x;
        }
    }
    sq.sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut impl ParamSet, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in grads.param_slices_mut() {
            for x in s.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for every parameter slice.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamWConfig,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(config: AdamWConfig, params: &impl ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .param_slices()
            .iter()
            .map(|s| vec![0.0; s.len()])
            .collect();
        OptimState {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One AdamW update with decoupled weight decay and bias correction.
pub fn adamw_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut OptimState) {
    state.step += 1;
    let AdamWConfig {
        lr,
        beta1,
        beta2,
        eps,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let slices = params.param_slices_mut();
    let gslices = grads.param_slices();
    assert_eq!(slices.len(), state.first.len(), "parameter layout changed");
    for (((p, g), m), v) in slices
        .into_iter()
        .zip(gslices)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        for k in 0..p.len() {
            if weight_decay != 0.0 {
                p[k] *= 1.0 - lr * weight_decay;
            }
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
