use serde::{Deserialize, Serialize};

use crate::error::EngineError;

pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Linear variance schedule with `steps` noise levels, indexed by `t = 1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize) -> Result<Self, EngineError> {
        Self::linear_range(steps, BETA_START, BETA_END)
    }

    pub fn linear_range(steps: usize, start: f64, end: f64) -> Result<Self, EngineError> {
        if steps == 0 {
            return Err(EngineError::InvalidConfig("schedule needs at least one step".into()));
        }
        if !(start > 0.0 && end < 1.0 && start <= end) {
            return Err(EngineError::InvalidConfig(format!(
                "beta range [{start}, {end}] must satisfy 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product of `1 - beta` up to `t`; 1 at `t = 0`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance of `z_{t-1}` given `z_t` and the clean sample.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))
    }

    /// Ancestral update `z_t -> z_{t-1}` from a noise estimate. `noise` is
    /// only used when `t > 1`.
    pub fn step(
        &self,
        z: &[f64],
        eps: &[f64],
        t: usize,
        noise: &[f64],
    ) -> Result<Vec<f64>, EngineError> {
        if t == 0 || t > self.steps() {
            return Err(EngineError::ScheduleExhausted);
        }
        let beta = self.beta(t);
        let coef = beta / (1.0 - self.alpha_bar(t)).sqrt();
        let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
        let sigma = if t > 1 { self.posterior_variance(t).sqrt() } else { 0.0 };
        Ok(z.iter()
            .zip(eps)
            .enumerate()
            .map(|(i, (&zi, &ei))| {
                let mean = inv_sqrt_alpha * (zi - coef * ei);
                if t > 1 {
                    mean + sigma * noise[i]
                } else {
                    mean
                }
            })
            .collect())
    }
}
