//! Adam with bias correction, optional RAdam rectification, two learning-rate
//! groups, linear warmup then linear decay, and global gradient-norm clipping.

use crate::numerics::{ParamGroup, ParamStore, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr_lm: f64,
    pub lr_other: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    pub radam: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_lm: 3e-4,
            lr_other: 1e-3,
            warmup_ratio: 0.1,
            total_steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            radam: false,
        }
    }
}

impl OptimConfig {
    /// Multiplier on the base learning rates at 0-based `step`.
    pub fn schedule(&self, step: usize) -> f64 {
        let total = self.total_steps.max(1);
        let warm = ((self.warmup_ratio * total as f64).ceil() as usize).min(total);
        if step < warm {
            (step + 1) as f64 / warm as f64
        } else if total == warm {
            1.0
        } else {
            (total.saturating_sub(step)) as f64 / (total - warm) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub lr_lm: f64,
    pub lr_other: f64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: OptimConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(config: OptimConfig, store: &ParamStore<F>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies accumulated gradients, then leaves them in place.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>) -> StepStats {
        let c = &self.config;
        let grad_norm = store.grad_norm();
        let clip = if c.max_grad_norm > 0.0 && grad_norm > c.max_grad_norm {
            c.max_grad_norm / grad_norm
        } else {
            1.0
        };
        let sched = c.schedule(self.step);
        let (lr_lm, lr_other) = (c.lr_lm * sched, c.lr_other * sched);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let rect = if c.radam { radam_rectifier(c.beta2, t) } else { Some(1.0) };
        for (id, param) in store.iter_mut() {
            let Some(grad) = param.tensor.grad().map(<[F]>::to_vec) else {
                continue;
            };
            let lr = match param.group {
                ParamGroup::Lm => lr_lm,
                ParamGroup::Other => lr_other,
            };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            for (i, x) in param.tensor.data_mut().iter_mut().enumerate() {
                let g = grad[i].to_f64_lossy() * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let update = match rect {
                    Some(r) => r * m_hat / ((v[i] / bc2).sqrt() + c.eps),
                    None => m_hat,
                };
                *x = F::of(x.to_f64_lossy() - lr * update);
            }
        }
        StepStats {
            grad_norm,
            lr_lm,
            lr_other,
        }
    }
}

/// RAdam variance rectification; `None` while the second moment is unreliable.
fn radam_rectifier(beta2: f64, t: i32) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b2t = beta2.powi(t);
    let rho = rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t);
    (rho > 4.0).then(|| ((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho)).sqrt())
}
