//! Adaptive-moment gradient ascent.
//!
//! Bias-corrected first/second moment accumulators; the update direction is
//! ascent (utilities are maximized). Descent callers negate the gradient.

use crate::error::{Error, Result};

/// Step size and moment decays of the adaptive-moment optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn with_step_size(step_size: f64) -> Self {
        OptimizerConfig {
            step_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("moment decays must lie in [0, 1)".to_string()));
        }
        Ok(())
    }
}

/// Per-parameter moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(config: OptimizerConfig, dim: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One ascent step `params += lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += c.step_size * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }

    /// One descent step (ascent on the negated gradient).
    pub fn descend(&mut self, params: &mut [f64], grad: &[f64]) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.ascend(params, &neg);
    }
}
