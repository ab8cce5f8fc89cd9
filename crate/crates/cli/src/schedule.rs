//! Learning-rate schedule: linear warm-up from zero, then cosine decay to
//! zero at the final step. The ramp ends exactly at `base_lr` where the
//! cosine begins, so the schedule is continuous at the boundary.

#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.base_lr * step as f64 / self.warmup_steps as f64;
        }
        let last = self.total_steps.saturating_sub(1).max(self.warmup_steps);
        let span = (last - self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / span).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
