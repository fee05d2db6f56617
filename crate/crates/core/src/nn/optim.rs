//! AdamW with decoupled weight decay.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One update on a flat parameter slice. `step` counts from 1.
///
/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)` with bias-corrected `m̂`, `v̂`.
pub fn adamw_step(
    theta: &mut [f64],
    grad: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    step: usize,
    cfg: &AdamWConfig,
) {
    assert!(step >= 1, "AdamW steps are 1-based");
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / c1;
        let v_hat = second[i] / c2;
        theta[i] -= cfg.learning_rate * cfg.weight_decay * theta[i];
        theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Moment buffers for a list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, sizes: &[usize]) -> Self {
        AdamW {
            config,
            step: 0,
            first: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.step += 1;
        for (i, (theta, grad)) in params.into_iter().zip(grads).enumerate() {
            adamw_step(theta, grad, &mut self.first[i], &mut self.second[i], self.step, &self.config);
        }
    }
}
