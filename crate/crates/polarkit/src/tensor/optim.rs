//! AdamW with decoupled weight decay, plus the cosine learning-rate schedule.

use super::autograd::GradStore;
use super::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-5 }
    }
}

/// Moment state is held in f64 regardless of the parameter element type, keyed
/// by parameter position, so the same [`ParamSet`] must be passed to every step.
pub struct AdamW {
    cfg: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> Self {
        AdamW { cfg, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter. A parameter without a gradient entry is
    /// treated as having zero gradient, so only its moments decay and the
    /// decoupled weight decay applies: with zero state that is exactly
    /// `p * (1 - lr * weight_decay)`.
    pub fn step<T: Scalar>(&mut self, params: &ParamSet<T>, grads: &GradStore<T>) {
        if self.m.is_empty() {
            for (_, p) in params.iter() {
                self.m.push(vec![0.0; p.numel()]);
                self.v.push(vec![0.0; p.numel()]);
            }
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different ParamSet");
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.cfg;

        for (i, (_, p)) in params.iter().enumerate() {
            let g: Option<Vec<f64>> =
                grads.get(p).map(|g| g.iter().map(|&v| v.to_f64()).collect());
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            debug_assert_eq!(m.len(), p.numel());
            p.update_data(|data| {
                for (j, d) in data.iter_mut().enumerate() {
                    let gj = g.as_ref().map(|g| g[j]).unwrap_or(0.0);
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                    let mhat = m[j] / bc1;
                    let vhat = v[j] / bc2;
                    let x = d.to_f64();
                    *d = T::from_f64(x - lr * weight_decay * x - lr * mhat / (vhat.sqrt() + eps));
                }
            });
        }
    }
}

/// Cosine decay from `lr_max` at step 0 to `lr_min` at `total` steps.
/// Steps past `total` stay at `lr_min`.
pub fn cosine_lr(step: u64, total: u64, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 || step >= total {
        return if total == 0 { lr_max } else { lr_min };
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos())
}
