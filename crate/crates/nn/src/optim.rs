//! Adam with per-parameter state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Tensor,
    v: Tensor,
    step: u64,
}

/// Adam over a fixed set of parameters.
///
/// A parameter is only stepped when it has a gradient in the current call,
/// so its moment estimates and bias-correction counter advance only on the
/// steps it actually took part in.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    members: Vec<ParamId>,
    state: BTreeMap<ParamId, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, members: Vec<ParamId>) -> Self {
        Self {
            config,
            members,
            state: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn members(&self) -> &[ParamId] {
        &self.members
    }

    /// Applies one update. Returns the number of parameters that moved.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> usize {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let mut touched = 0;
        for &id in &self.members {
            let Some(g) = grads.get(id) else { continue };
            let st = self.state.entry(id).or_insert_with(|| Moments {
                m: Tensor::zeros(g.rows(), g.cols()),
                v: Tensor::zeros(g.rows(), g.cols()),
                step: 0,
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let p = params.get_mut(id);
            for (((w, &gi), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(st.m.data_mut())
                .zip(st.v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            touched += 1;
        }
        touched
    }
}
