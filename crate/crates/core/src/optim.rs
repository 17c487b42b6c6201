//! ADAM with bias correction.

use alloc::vec::Vec;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("adam needs lr > 0, betas in [0, 1) and epsilon > 0".into()))
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(config: AdamConfig, params: &ParamStore<S>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros_like(&p.value)).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    /// One update from the gradients currently held in `params`. Frozen
    /// parameters are not touched.
    pub fn step(&mut self, params: &mut ParamStore<S>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                op: "adam",
                axis: "parameters",
                expected: self.m.len(),
                found: params.len(),
            });
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let (one, lr, eps) = (S::one(), S::of(c.lr), S::of(c.epsilon));
        let (inv_bc1, inv_bc2) = (S::of(1.0 / bc1), S::of(1.0 / bc2));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.frozen {
                continue;
            }
            if m.shape() != p.value.shape() {
                return Err(Error::DimensionMismatch {
                    op: "adam",
                    axis: "parameter size",
                    expected: m.len(),
                    found: p.value.len(),
                });
            }
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = b1 * md[i] + (one - b1) * g[i];
                vd[i] = b2 * vd[i] + (one - b2) * g[i] * g[i];
                let m_hat = md[i] * inv_bc1;
                let v_hat = vd[i] * inv_bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
