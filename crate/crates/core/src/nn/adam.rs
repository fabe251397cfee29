use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::layer::{ParamId, ParamSet};
use super::tape::Gradients;
use super::tensor::Tensor2;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: `θ ← θ − lr·wd·θ` after the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: HashMap<ParamId, Tensor2<T>>,
    second: HashMap<ParamId, Tensor2<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.first.get(&id)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor2<T>> {
        self.second.get(&id)
    }

    /// Applies one update to every parameter of `params`. Parameters without
    /// an entry in `grads` are treated as having zero gradient. All gradients
    /// are validated before any parameter is touched.
    pub fn step<P: ParamSet<T> + ?Sized>(&mut self, params: &mut P, grads: &Gradients<T>) -> Result<()> {
        let ids = params.param_ids();
        for (id, g) in grads.iter() {
            let p = params
                .param(id)
                .ok_or_else(|| Error::Usage(format!("gradient for unknown parameter {}", id.0)))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam_step", p.shape(), g.shape()));
            }
            if let Some(pos) = g.as_slice().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter {} (slot {}, {}) at index {pos}",
                    id.0,
                    id.slot(),
                    if id.is_weight() { "weight" } else { "bias" }
                )));
            }
        }

        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps, wd) = (T::lit(c.lr), T::lit(c.eps), T::lit(c.weight_decay));
        let t = self.step as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for id in ids {
            let param = params.param_mut(id).expect("id from param_ids");
            let shape = param.shape();
            let m = self.first.entry(id).or_insert_with(|| Tensor2::zeros(shape.0, shape.1));
            let v = self
                .second
                .entry(id)
                .or_insert_with(|| Tensor2::zeros(shape.0, shape.1));
            let g = grads.get(id);
            let theta = param.as_mut_slice();
            let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
            for i in 0..theta.len() {
                let gi = g.map_or(T::zero(), |g| g.as_slice()[i]);
                ms[i] = b1 * ms[i] + (T::one() - b1) * gi;
                vs[i] = b2 * vs[i] + (T::one() - b2) * gi * gi;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                if wd > T::zero() {
                    theta[i] -= lr * wd * theta[i];
                }
            }
        }
        Ok(())
    }
}
