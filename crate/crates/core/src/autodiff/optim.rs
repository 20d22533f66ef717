use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use crate::error::{Error, Result};

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    fn ensure_buffers(&mut self, store: &ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
        }
    }

    /// First and second moment buffers of parameter `i`.
    pub fn moments(&self, i: usize) -> Option<(&[f64], &[f64])> {
        Some((self.m.get(i)?.as_slice(), self.v.get(i)?.as_slice()))
    }

    /// Restores state saved with [`AdamW::moments`] and [`AdamW::steps`].
    pub fn restore(&mut self, t: u64, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> Result<()> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Checkpoint("optimizer moment buffers disagree".into()));
        }
        self.t = t;
        self.m = m;
        self.v = v;
        Ok(())
    }

    /// Applies one update to every trainable parameter, then zeroes gradients.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.ensure_buffers(store);
        for id in store.ids() {
            let t = store.get(id);
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::MissingGradient(store.name(id).to_string()));
            }
            if self.m[id.index()].len() != t.len() {
                return Err(Error::DimensionMismatch {
                    expected: t.len(),
                    actual: self.m[id.index()].len(),
                });
            }
        }
        self.t += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (k, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[k];
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *p -= lr * (mhat / (vhat.sqrt() + eps) + weight_decay * *p);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

/// Linear warmup followed by cosine decay to `final_ratio * base_lr` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub final_ratio: f64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_frac: f64, final_ratio: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_frac).ceil() as usize;
        Self {
            base_lr,
            warmup_steps: warmup_steps.min(total_steps.saturating_sub(1)),
            total_steps,
            final_ratio,
        }
    }

    /// Learning rate used at zero-based `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let last = self.total_steps.saturating_sub(1);
        let span = last.saturating_sub(self.warmup_steps);
        let progress = if span == 0 {
            1.0
        } else {
            ((step - self.warmup_steps) as f64 / span as f64).min(1.0)
        };
        let floor = self.base_lr * self.final_ratio;
        floor + (self.base_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}
