//! The null-space step as a gradient transformation in front of an update rule.

use std::sync::Arc;

use super::{nsm_step, ConstraintSpec, NullSpaceConfig};
use crate::error::Result;
use crate::vecops::scaled;

/// Maps `(θ, ∇L)` to the modified gradient `−δ/η`, so that plain gradient
/// descent with step `η` on the output reproduces the null-space update.
#[derive(Debug, Clone)]
pub struct NullSpaceTransform {
    spec: Arc<dyn ConstraintSpec>,
    cfg: NullSpaceConfig,
}

impl NullSpaceTransform {
    pub fn apply(&self, theta: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        let delta = nsm_step(theta, grad, &self.spec, &self.cfg)?;
        Ok(scaled(-1.0 / self.cfg.eta, &delta))
    }

    pub fn config(&self) -> &NullSpaceConfig {
        &self.cfg
    }
}

pub fn chain_transform(spec: Arc<dyn ConstraintSpec>, cfg: NullSpaceConfig) -> NullSpaceTransform {
    NullSpaceTransform { spec, cfg }
}

/// A first-order optimizer consuming (possibly transformed) gradients.
pub trait UpdateRule {
    fn update(&mut self, theta: &mut [f64], grad: &[f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct GradientDescent {
    pub lr: f64,
}

impl UpdateRule for GradientDescent {
    fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= self.lr * g;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }
}

impl UpdateRule for Adam {
    fn update(&mut self, theta: &mut [f64], grad: &[f64]) {
        if self.m.len() != grad.len() {
            self.m = vec![0.0; grad.len()];
            self.v = vec![0.0; grad.len()];
            self.t = 0;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..grad.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
