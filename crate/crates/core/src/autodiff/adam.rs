//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Hyperparameters; `Default` gives lr 1e-4, beta1 0.9, beta2 0.999,
/// epsilon 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for a fixed set of parameter slots. Slot `i` must be
/// updated with the same parameter every step; slots are sized on first use.
pub struct Adam<S> {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, slots: usize) -> Self {
        Adam {
            config,
            step: 0,
            m: vec![Vec::new(); slots],
            v: vec![Vec::new(); slots],
        }
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once per optimization step,
    /// before updating the slots with that step's gradients.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the update `p -= lr * m_hat / (sqrt(v_hat) + eps)` in place.
    pub fn update(&mut self, slot: usize, param: &mut [S], grad: &[S]) -> Result<()> {
        if param.len() != grad.len() {
            return Err(Error::shape("adam update", &[param.len()], &[grad.len()]));
        }
        if self.step == 0 {
            return Err(Error::invalid("adam update before begin_step"));
        }
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        if m.is_empty() {
            m.resize(param.len(), S::zero());
            v.resize(param.len(), S::zero());
        } else if m.len() != param.len() {
            return Err(Error::shape("adam slot size", &[m.len()], &[param.len()]));
        }

        let b1 = S::cast(self.config.beta1);
        let b2 = S::cast(self.config.beta2);
        let lr = S::cast(self.config.lr);
        let eps = S::cast(self.config.eps);
        let one = S::one();
        // Bias corrections shrink the warm-up attenuation of the zero-seeded
        // moments: m_hat = m / (1 - b1^t), v_hat = v / (1 - b2^t).
        let c1 = one - b1.powi(self.step as i32);
        let c2 = one - b2.powi(self.step as i32);

        for i in 0..param.len() {
            m[i] = b1 * m[i] + (one - b1) * grad[i];
            v[i] = b2 * v[i] + (one - b2) * grad[i] * grad[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_each_weight_by_lr_when_eps_is_zero() {
        // With t=1 the corrected moments are exactly the gradient, so the
        // step is lr * g / |g| = lr * sign(g).
        let config = AdamConfig {
            lr: 0.01,
            eps: 0.0,
            ..AdamConfig::default()
        };
        let mut opt: Adam<f64> = Adam::new(config, 1);
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -7.0, 0.001];
        opt.begin_step();
        opt.update(0, &mut p, &g).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-15);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-15);
        assert!((p[2] - (0.5 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default(), 1);
        let mut p = vec![3.0, -1.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![3.0, -1.0]);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let config = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut opt: Adam<f64> = Adam::new(config, 1);
        let mut p = vec![4.0];
        for _ in 0..2000 {
            let g = vec![2.0 * (p[0] - 1.5)];
            opt.begin_step();
            opt.update(0, &mut p, &g).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-3, "ended at {}", p[0]);
    }

    #[test]
    fn update_before_begin_step_is_rejected() {
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default(), 1);
        let mut p = vec![1.0];
        assert!(opt.update(0, &mut p, &[1.0]).is_err());
    }

    #[test]
    fn slot_size_changes_are_rejected() {
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default(), 1);
        let mut p = vec![1.0, 2.0];
        opt.begin_step();
        opt.update(0, &mut p, &[0.1, 0.1]).unwrap();
        let mut q = vec![1.0];
        assert!(opt.update(0, &mut q, &[0.1]).is_err());
    }
}
