//! Learning-rate schedules, as multipliers on the base rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    /// Linear ramp over `warmup` steps, then linear decay to zero at the
    /// last step.
    Linear,
    /// Geometric ramp from `start` to 1 over `warmup` steps, then a factor
    /// of `decay_factor` every `decay_every` steps.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub warmup: usize,
    pub start: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn constant() -> Self {
        Self {
            kind: ScheduleKind::Constant,
            warmup: 0,
            start: 1.0,
            decay_factor: 1.0,
            decay_every: 1,
            total_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScheduleKind::Exponential {
            if !(self.start > 0.0 && self.start <= 1.0) {
                return Err(Error::Config(format!(
                    "exponential schedule needs 0 < schedule_start <= 1, got {}",
                    self.start
                )));
            }
            if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_every == 0 {
                return Err(Error::Config(
                    "exponential schedule needs 0 < decay_factor <= 1 and decay_every >= 1".into(),
                ));
            }
        }
        if self.kind == ScheduleKind::Linear && self.warmup > self.total_steps {
            return Err(Error::Config("schedule warmup exceeds total steps".into()));
        }
        Ok(())
    }

    /// Multiplier for 0-based `step`.
    pub fn factor(&self, step: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => 1.0,
            ScheduleKind::Linear => {
                if step < self.warmup {
                    (step + 1) as f64 / self.warmup as f64
                } else {
                    let span = self.total_steps.saturating_sub(self.warmup).max(1);
                    (self.total_steps.saturating_sub(step) as f64 / span as f64).clamp(0.0, 1.0)
                }
            }
            ScheduleKind::Exponential => {
                if step < self.warmup {
                    self.start.powf(1.0 - step as f64 / self.warmup as f64)
                } else {
                    self.decay_factor.powi(((step - self.warmup) / self.decay_every) as i32)
                }
            }
        }
    }
}
