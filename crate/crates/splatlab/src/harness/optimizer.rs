//! Per-parameter-group Adam with decoupled step sizes.

use serde::{Deserialize, Serialize};

use crate::adc::Origin;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub step_positions: f64,
    pub step_log_scales: f64,
    pub step_opacities: f64,
    pub step_colors: f64,
    pub step_field: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            step_positions: 2e-3,
            step_log_scales: 8e-3,
            step_opacities: 5e-2,
            step_colors: 2.5e-2,
            step_field: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let steps = [
            self.step_positions,
            self.step_log_scales,
            self.step_opacities,
            self.step_colors,
            self.step_field,
        ];
        if steps.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("optimizer step sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Adam state for one parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(len: usize, cfg: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adam state length mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    /// Resize across a densify/prune pass: kept Gaussians carry their
    /// moments, new children start cold.
    pub fn remap(&self, origins: &[Origin], width: usize) -> Self {
        let mut m = vec![0.0; origins.len() * width];
        let mut v = vec![0.0; origins.len() * width];
        for (new_idx, origin) in origins.iter().enumerate() {
            if let Origin::Kept(old) = *origin {
                for c in 0..width {
                    m[new_idx * width + c] = self.m[old * width + c];
                    v[new_idx * width + c] = self.v[old * width + c];
                }
            }
        }
        Self {
            m,
            v,
            steps: self.steps,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}
