use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-stage learning rate: linear warmup, plateau at the peak, then one
/// decayed plateau for the rest of training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub decay_start: usize,
    /// Multiplier applied from `decay_start` on, in (0, 1].
    pub decay_factor: f64,
}

impl ScheduleSpec {
    /// Defaults: one epoch of warmup, decay by 10x at 80% of training.
    pub fn for_run(peak_lr: f64, steps_per_epoch: usize, epochs: usize) -> Self {
        let total = steps_per_epoch * epochs;
        let warmup_steps = steps_per_epoch.min(total);
        let decay_start = ((total as f64 * 0.8).round() as usize).max(warmup_steps);
        Self {
            peak_lr,
            warmup_steps,
            decay_start,
            decay_factor: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return Err(Error::invalid("schedule", "peak_lr must be positive"));
        }
        if self.warmup_steps > self.decay_start {
            return Err(Error::invalid(
                "schedule",
                "warmup_steps must not exceed decay_start",
            ));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::invalid("schedule", "decay_factor must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64
        } else if step < self.decay_start {
            self.peak_lr
        } else {
            self.peak_lr * self.decay_factor
        }
    }
}
