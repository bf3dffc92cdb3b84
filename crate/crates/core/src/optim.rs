//! AdamW with decoupled weight decay, and the linear learning-rate ramp.

use crate::policy::PolicyParams;
use serde::{Deserialize, Serialize};

/// `lr_start + (lr_end - lr_start) * step / total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, lr_start: f64, lr_end: f64) -> f64 {
    let total = total_steps.max(1);
    let t = step.min(total) as f64 / total as f64;
    // Same line as start + (end - start) * t, but exact at both endpoints.
    lr_start * (1.0 - t) + lr_end * t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(n_params: usize, cfg: AdamWConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One descent step on `loss_grad` (the gradient of the quantity to minimize).
    pub fn update(&mut self, params: &mut PolicyParams, loss_grad: &PolicyParams, lr: f64) {
        let AdamWConfig {
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        let p = params.as_mut_slice();
        let g = loss_grad.as_slice();
        for i in 0..p.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyDims;

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_schedule(0, 100, 1e-3, 1e-6), 1e-3);
        assert_eq!(lr_schedule(100, 100, 1e-3, 1e-6), 1e-6);
        assert!((lr_schedule(50, 100, 1e-3, 1e-6) - 5.005e-4).abs() < 1e-18);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let dims = PolicyDims {
            context: 2,
            hidden: 2,
            embed: 2,
            max_len: 2,
            vocab: 3,
        };
        let mut p = PolicyParams::zeros(dims);
        p.as_mut_slice()
            .iter_mut()
            .enumerate()
            .for_each(|(i, x)| *x = i as f64 - 3.0);
        let before = p.clone();
        let mut opt = AdamW::new(p.as_slice().len(), AdamWConfig::default());
        opt.update(&mut p, &before.zeros_like(), 0.1);
        for (a, b) in p.as_slice().iter().zip(before.as_slice()) {
            assert_eq!(*a, b * (1.0 - 0.1 * 0.01));
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let dims = PolicyDims {
            context: 1,
            hidden: 1,
            embed: 1,
            max_len: 1,
            vocab: 2,
        };
        let mut p = PolicyParams::zeros(dims);
        let mut g = p.zeros_like();
        g.as_mut_slice()[0] = 0.37;
        g.as_mut_slice()[1] = -5.0;
        let mut opt = AdamW::new(p.as_slice().len(), AdamWConfig::default());
        opt.update(&mut p, &g, 0.01);
        assert!((p.as_slice()[0] + 0.01).abs() < 1e-9);
        assert!((p.as_slice()[1] - 0.01).abs() < 1e-9);
        assert_eq!(p.as_slice()[2], 0.0);
    }
}
