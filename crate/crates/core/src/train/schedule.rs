use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Linear warmup from 0 followed by cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub total_epochs: usize,
    /// Interpolate within an epoch instead of holding the rate per epoch.
    pub step_granular: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_epochs: 40,
            min_lr: 1e-6,
            total_epochs: 500,
            step_granular: false,
        }
    }
}

impl ScheduleConfig {
    /// A flat schedule at `lr` for `epochs`.
    pub fn constant(lr: f64, epochs: usize) -> Self {
        Self {
            base_lr: lr,
            warmup_epochs: 0,
            min_lr: lr,
            total_epochs: epochs,
            step_granular: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 || self.warmup_epochs >= self.total_epochs {
            return Err(Error::Config(format!(
                "warmup ({}) must be shorter than training ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if !(self.base_lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return Err(Error::Config(format!(
                "need 0 ≤ min_lr ≤ base_lr, 0 < base_lr (got {} and {})",
                self.min_lr, self.base_lr
            )));
        }
        Ok(())
    }

    /// Rate at a (possibly fractional) epoch position in `[0, total]`.
    pub fn lr_at(&self, epoch: f64) -> f64 {
        let w = self.warmup_epochs as f64;
        let e = epoch.clamp(0.0, self.total_epochs as f64);
        if e < w {
            return self.base_lr * e / w;
        }
        let span = (self.total_epochs - self.warmup_epochs) as f64;
        let t = (e - w) / span;
        self.min_lr + (self.base_lr - self.min_lr) * 0.5 * (1.0 + (PI * t).cos())
    }

    /// Rate for batch `step` of `steps` in zero-based epoch `epoch`. Epochs
    /// are counted from 1 so training never runs at the zero-rate origin.
    pub fn lr_for(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        let pos = if self.step_granular && steps > 0 {
            epoch as f64 + (step + 1) as f64 / steps as f64
        } else {
            (epoch + 1) as f64
        };
        self.lr_at(pos)
    }
}
