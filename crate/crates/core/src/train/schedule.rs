use serde::{Deserialize, Serialize};

/// Linear warmup to `max_lr`, cosine decay to `floor_lr`, then flat.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub max_lr: f64,
    pub warmup_steps: u64,
    pub decay_steps: u64,
    pub floor_lr: f64,
}

impl ScheduleConfig {
    /// Defaults used for the convolutional models: peak 1e-4, 20 warmup
    /// steps, 1100 decay steps, floor at 1% of peak.
    pub fn warmup_decay(max_lr: f64, warmup_steps: u64, decay_steps: u64) -> Self {
        Self { max_lr, warmup_steps, decay_steps: decay_steps.max(1), floor_lr: max_lr / 100.0 }
    }

    pub fn constant(lr: f64) -> Self {
        Self { max_lr: lr, warmup_steps: 0, decay_steps: 1, floor_lr: lr }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * step as f64 / self.warmup_steps as f64;
        }
        let t = step - self.warmup_steps;
        if t >= self.decay_steps {
            return self.floor_lr;
        }
        let progress = t as f64 / self.decay_steps as f64;
        self.floor_lr + (self.max_lr - self.floor_lr) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::warmup_decay(1e-4, 20, 1100)
    }
}
