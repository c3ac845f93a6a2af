//! RMSProp-preconditioned Nesterov momentum, stepping uphill.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
    /// Rescale gradients whose L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            rms_decay: 0.9,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..1.0).contains(&self.rms_decay)
            && self.epsilon > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Accumulators for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    mean_square: Vec<f64>,
    velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        Self {
            config,
            mean_square: vec![0.0; len],
            velocity: vec![0.0; len],
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Changes the step scale, keeping the accumulators.
    pub fn set_learning_rate(&mut self, learning_rate: f64) {
        self.config.learning_rate = learning_rate;
    }

    pub fn mean_square(&self) -> &[f64] {
        &self.mean_square
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// One ascent step: `a ← ρa + (1−ρ)g²`, `s = η g / √(a + δ)`,
    /// `v ← m v + s`, `params += s + m v`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grad.len() != params.len() {
            return Err(invalid(format!(
                "optimizer holds {} parameters, got {} parameters and {} gradients",
                self.velocity.len(),
                params.len(),
                grad.len()
            )));
        }
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(limit) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for j in 0..params.len() {
            let g = grad[j] * scale;
            self.mean_square[j] = c.rms_decay * self.mean_square[j] + (1.0 - c.rms_decay) * g * g;
            let s = c.learning_rate * g / (self.mean_square[j] + c.epsilon).sqrt();
            self.velocity[j] = c.momentum * self.velocity[j] + s;
            params[j] += s + c.momentum * self.velocity[j];
        }
        Ok(())
    }
}
