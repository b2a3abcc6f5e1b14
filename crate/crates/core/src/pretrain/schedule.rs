use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::PretrainError;

/// Linear warmup to `base`, then cosine decay to `floor * base` at the last
/// step. Steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub base: f64,
    pub warmup_steps: usize,
    pub floor: f64,
}

pub fn lr_schedule(total_steps: usize, base_lr: f64, warmup_frac: f64) -> Result<LrSchedule, PretrainError> {
    if total_steps == 0 {
        return Err(PretrainError::Config("schedule needs at least one step".into()));
    }
    if !(warmup_frac > 0.0 && warmup_frac < 1.0) {
        return Err(PretrainError::Config("warmup_frac must lie in (0, 1)".into()));
    }
    let mut warmup = ((warmup_frac * total_steps as f64).ceil() as usize).max(1);
    if total_steps > 1 {
        warmup = warmup.min(total_steps - 1);
    }
    Ok(LrSchedule {
        total_steps,
        base: base_lr,
        warmup_steps: warmup,
        floor: 0.1,
    })
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        let s = step.clamp(1, self.total_steps);
        let w = self.warmup_steps;
        if s == w {
            return self.base;
        }
        if s < w {
            return self.base * s as f64 / w as f64;
        }
        let t = (s - w) as f64 / (self.total_steps - w) as f64;
        let lo = self.floor * self.base;
        lo + (self.base - lo) * 0.5 * (1.0 + (PI * t).cos())
    }
}
