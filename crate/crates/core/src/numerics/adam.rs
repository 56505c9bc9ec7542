use serde::{Deserialize, Serialize};

use super::params::Params;
use super::Matrix;
use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            beta1: 0.99,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moment estimates, one pair per trainable tensor in traversal order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    pub names: Vec<String>,
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            names: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so an error leaves `params` and `self` unchanged.
    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = grads.tensors();
        for (name, g) in &grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        let mut params = params.tensors_mut();
        if params.len() != grads.len() {
            return Err(shape_err("parameter and gradient sets differ"));
        }
        if self.names.is_empty() {
            self.names = params.iter().map(|(n, _)| n.clone()).collect();
            self.first = params
                .iter()
                .map(|(_, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect();
            self.second = self.first.clone();
        }
        for (i, ((name, p), (_, g))) in params.iter().zip(&grads).enumerate() {
            if self.names.get(i) != Some(name)
                || p.shape() != g.shape()
                || self.first[i].shape() != p.shape()
            {
                return Err(shape_err(format!(
                    "optimizer state does not match parameter `{name}`"
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, ((_, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step<P: Params + ?Sized>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
) -> Result<()> {
    state.step(params, grads)
}
