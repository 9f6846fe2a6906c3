//! Adam with bias correction and a cosine annealing schedule.

use std::collections::HashMap;

use crate::tensor::Tensor;

/// Default Adam betas used across all trainers in this project.
pub const DEFAULT_BETA1: f64 = 0.4;
pub const DEFAULT_BETA2: f64 = 0.99;
pub const DEFAULT_EPSILON: f64 = 1e-8;

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam optimizer. Moment buffers are keyed by parameter identity and created
/// lazily with the parameter's shape; the step counter advances by exactly one
/// per `step` call.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    moments: HashMap<u64, Moments>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon: DEFAULT_EPSILON,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        Self::new(DEFAULT_BETA1, DEFAULT_BETA2)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over `params` at learning rate `lr`. Parameters without an
    /// accumulated gradient are left untouched.
    pub fn step(&mut self, params: &[Tensor], lr: f64) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for p in params {
            let Some(grad) = p.grad() else { continue };
            let entry = self.moments.entry(p.id()).or_insert_with(|| Moments {
                m: vec![0.0; p.numel()],
                v: vec![0.0; p.numel()],
            });
            debug_assert_eq!(entry.m.len(), p.numel());
            p.update_data(|data| {
                for i in 0..data.len() {
                    let g = grad[i];
                    entry.m[i] = self.beta1 * entry.m[i] + (1.0 - self.beta1) * g;
                    entry.v[i] = self.beta2 * entry.v[i] + (1.0 - self.beta2) * g * g;
                    let m_hat = entry.m[i] / bc1;
                    let v_hat = entry.v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            });
        }
    }
}

/// Cosine annealing: lr(t) = min + (base - min) * (1 + cos(pi*t/T)) / 2,
/// clamped to `min` once t reaches the period.
#[derive(Debug, Clone)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub period: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, min_lr: f64, period: u64) -> Self {
        CosineSchedule {
            base_lr,
            min_lr,
            period: period.max(1),
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.period {
            return self.min_lr;
        }
        let t = step as f64 / self.period as f64;
        self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}
