//! Adam over the weight tensors and the learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::diffcore::GradMap;
use crate::error::{Error, Result};
use crate::model::{ModelParams, ParamId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// `depth^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
    Warmup {
        warmup_steps: u64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant { lr: 1e-3 }
    }
}

impl LrSchedule {
    /// Rate at 1-based `step`.
    pub fn rate(&self, step: u64, depth: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Warmup { warmup_steps } => {
                let s = step.max(1) as f64;
                let w = warmup_steps.max(1) as f64;
                (depth as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LrSchedule::Constant { lr } if !(lr > 0.0 && lr.is_finite()) => {
                Err(Error::domain(format!("learning rate must be positive, got {lr}")))
            }
            LrSchedule::Warmup { warmup_steps: 0 } => Err(Error::domain("warmup_steps must be >= 1")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Optimizer state: Adam moments per weight tensor (in [`ParamId::ALL`]
/// order), the Adam step count, and the EM step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
    pub em_step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = ParamId::ALL.iter().map(|&id| vec![0.0; params.get(id).len()]).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            em_step: 0,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.first.len() != ParamId::ALL.len() || self.second.len() != ParamId::ALL.len() {
            return Err(Error::shape("OptState", ParamId::ALL.len(), self.first.len()));
        }
        for (i, id) in ParamId::ALL.iter().enumerate() {
            let n = params.get(*id).len();
            if self.first[i].len() != n || self.second[i].len() != n {
                return Err(Error::shape("OptState", n, self.first[i].len()));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam step on the weights. Noise variances are
    /// untouched.
    pub fn adam_step(
        &mut self,
        params: &mut ModelParams,
        grads: &GradMap,
        schedule: &LrSchedule,
        adam: &AdamConfig,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        self.step += 1;
        let lr = schedule.rate(self.step, params.dims.depth);
        let c1 = 1.0 - adam.beta1.powf(self.step as f64);
        let c2 = 1.0 - adam.beta2.powf(self.step as f64);
        for (i, id) in ParamId::ALL.iter().enumerate() {
            let Some(g) = grads.get(id.key()) else {
                continue;
            };
            let w = params.get_mut(*id);
            if g.len() != w.len() {
                return Err(Error::shape("adam_step", w.len(), g.len()));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..w.len() {
                m[j] = adam.beta1 * m[j] + (1.0 - adam.beta1) * g[j];
                v[j] = adam.beta2 * v[j] + (1.0 - adam.beta2) * g[j] * g[j];
                w[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + adam.epsilon);
            }
        }
        Ok(())
    }
}
