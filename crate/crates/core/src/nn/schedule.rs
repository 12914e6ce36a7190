use serde::{Deserialize, Serialize};

/// Linear warmup from 0 to `base_lr`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        Self {
            base_lr,
            warmup_ratio: warmup_ratio.clamp(0.0, 1.0),
            total_steps,
        }
    }

    pub fn warmup_steps(&self) -> f64 {
        self.warmup_ratio * self.total_steps as f64
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let warmup = self.warmup_steps();
        let s = step as f64;
        if s >= warmup {
            self.base_lr
        } else {
            self.base_lr * s / warmup
        }
    }
}
