//! Inner-loop optimizers producing the fast iterates.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numerics::Vec64;

pub trait Optimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()>;
}

/// SGD with heavy-ball momentum in the "velocity then step" form:
/// `v <- beta * v + g; p <- p - lr * v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    /// Decoupled: `p <- p - lr * wd * p` before the gradient step. Zero disables.
    pub weight_decay: f64,
    pub velocity: Vec64,
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, len: usize) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::config("optimizer.lr", "learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("optimizer.momentum", "momentum must lie in [0, 1)"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config("optimizer.weight_decay", "weight decay must be >= 0"));
        }
        Ok(SgdState {
            lr,
            momentum,
            weight_decay,
            velocity: Vec64::zeros(len),
        })
    }
}

impl Optimizer for SgdState {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("sgd_step params", self.velocity.len(), params.len())?;
        check_len("sgd_step grad", params.len(), grad.len())?;
        if self.weight_decay > 0.0 {
            let shrink = self.lr * self.weight_decay;
            params.iter_mut().for_each(|p| *p -= shrink * *p);
        }
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: Vec64,
    pub v: Vec64,
    pub t: u64,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64, len: usize) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::config("optimizer.lr", "learning rate must be > 0"));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config("optimizer.beta", "betas must lie in [0, 1)"));
        }
        if !(eps > 0.0) {
            return Err(Error::config("optimizer.eps", "eps must be > 0"));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::config("optimizer.weight_decay", "weight decay must be >= 0"));
        }
        Ok(AdamState {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: Vec64::zeros(len),
            v: Vec64::zeros(len),
            t: 0,
        })
    }

    pub fn with_defaults(lr: f64, len: usize) -> Result<Self> {
        Self::new(lr, 0.9, 0.999, 1e-8, 0.0, len)
    }
}

impl Optimizer for AdamState {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_len("adam_step params", self.m.len(), params.len())?;
        check_len("adam_step grad", params.len(), grad.len())?;
        if self.weight_decay > 0.0 {
            let shrink = self.lr * self.weight_decay;
            params.iter_mut().for_each(|p| *p -= shrink * *p);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, m), v), g) in params
            .iter_mut()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grad)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Serializable optimizer choice used by experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        weight_decay: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            lr: 0.01,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Either optimizer behind one type.
#[derive(Clone, Debug)]
pub enum AnyOptimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl OptimizerConfig {
    pub fn build(&self, len: usize) -> Result<AnyOptimizer> {
        Ok(match *self {
            OptimizerConfig::Sgd {
                lr,
                momentum,
                weight_decay,
            } => AnyOptimizer::Sgd(SgdState::new(lr, momentum, weight_decay, len)?),
            OptimizerConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
                weight_decay,
            } => AnyOptimizer::Adam(AdamState::new(lr, beta1, beta2, eps, weight_decay, len)?),
        })
    }
}

impl Optimizer for AnyOptimizer {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            AnyOptimizer::Sgd(s) => s.step(params, grad),
            AnyOptimizer::Adam(s) => s.step(params, grad),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_step() {
        let mut s = SgdState::new(0.1, 0.0, 0.0, 1).unwrap();
        let mut p = [1.0];
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_decays_velocity_only() {
        let mut s = SgdState::new(0.1, 0.9, 0.0, 1).unwrap();
        s.velocity[0] = 2.0;
        let mut p = [1.0];
        s.step(&mut p, &[0.0]).unwrap();
        assert!((s.velocity[0] - 1.8).abs() < 1e-15);
        assert!((p[0] - (1.0 - 0.1 * 1.8)).abs() < 1e-15);

        let mut s = SgdState::new(0.1, 0.9, 0.0, 1).unwrap();
        let mut p = [1.0];
        s.step(&mut p, &[0.0]).unwrap();
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn momentum_two_steps() {
        let mut s = SgdState::new(0.1, 0.9, 0.0, 1).unwrap();
        let mut p = [1.0];
        s.step(&mut p, &[1.0]).unwrap();
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.71).abs() < 1e-14);
    }

    #[test]
    fn length_mismatch() {
        let mut s = SgdState::new(0.1, 0.0, 0.0, 2).unwrap();
        let mut p = [1.0, 2.0];
        assert!(s.step(&mut p, &[1.0]).is_err());
        let mut a = AdamState::with_defaults(1e-3, 2).unwrap();
        assert!(a.step(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn invalid_hyperparameters() {
        assert!(SgdState::new(0.0, 0.0, 0.0, 1).is_err());
        assert!(SgdState::new(0.1, 1.0, 0.0, 1).is_err());
        assert!(AdamState::new(1e-3, 0.9, 1.0, 1e-8, 0.0, 1).is_err());
        assert!(AdamState::new(1e-3, 0.9, 0.99, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_in_sign_direction() {
        // m_hat = g, v_hat = g^2 => step = lr * g / (|g| + eps)
        let mut a = AdamState::with_defaults(1e-3, 2).unwrap();
        let mut p = [0.0, 0.0];
        a.step(&mut p, &[5.0, -5.0]).unwrap();
        let expected = 1e-3 * 5.0 / (5.0 + 1e-8);
        assert!((p[0] + expected).abs() < 1e-15);
        assert!((p[1] - expected).abs() < 1e-15);
        assert!((p[0].abs() - 1e-3).abs() < 1e-11);
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut a = AdamState::with_defaults(1e-3, 1).unwrap();
        let mut p = [0.7];
        for _ in 0..5 {
            a.step(&mut p, &[0.0]).unwrap();
        }
        assert_eq!(p[0], 0.7);
    }

    #[test]
    fn adam_scale_invariant_for_constant_gradient() {
        // With a constant gradient g the bias-corrected moments are exactly
        // g and g^2, so every step is lr * g / (|g| + eps).
        let run = |g: f64| {
            let mut a = AdamState::with_defaults(1e-2, 1).unwrap();
            let mut p = [0.0];
            for _ in 0..2000 {
                a.step(&mut p, &[g]).unwrap();
            }
            p[0]
        };
        let (a, b) = (run(0.5), run(50.0));
        assert!((a - b).abs() < 1e-6 * b.abs(), "{a} vs {b}");
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut s = SgdState::new(0.1, 0.0, 0.5, 1).unwrap();
        let mut p = [2.0];
        s.step(&mut p, &[0.0]).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn gd_on_quadratic_is_monotone() {
        let a = [0.5, 1.0, 3.0];
        let lr = 0.6; // < 2 / 3
        let mut s = SgdState::new(lr, 0.0, 0.0, 3).unwrap();
        let mut p = [1.0, -2.0, 0.5];
        let norm = |p: &[f64]| p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut g = [0.0; 3];
        for i in 0..3 {
            g[i] = a[i] * p[i];
        }
        s.step(&mut p, &g).unwrap();
        let mut prev = norm(&p);
        for _ in 0..200 {
            for i in 0..3 {
                g[i] = a[i] * p[i];
            }
            s.step(&mut p, &g).unwrap();
            let n = norm(&p);
            assert!(n <= prev + 1e-15);
            prev = n;
        }
        assert!(prev < 1e-10);
    }
}
