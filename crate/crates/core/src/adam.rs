//! Adam with bias correction over the flattened network parameters.

use serde::{Deserialize, Serialize};

use crate::error::{DppError, Result};
use crate::net::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamHyper {
    /// One coordinate update at step `t` (1-based). Returns `(param, m, v)`.
    #[inline]
    pub fn update(&self, param: f64, grad: f64, m: f64, v: f64, t: u64) -> (f64, f64, f64) {
        let m = self.beta1 * m + (1.0 - self.beta1) * grad;
        let v = self.beta2 * v + (1.0 - self.beta2) * grad * grad;
        let m_hat = m / (1.0 - self.beta1.powf(t as f64));
        let v_hat = v / (1.0 - self.beta2.powf(t as f64));
        (param - self.lr * m_hat / (v_hat.sqrt() + self.eps), m, v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }
}

pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut AdamState, hyper: &AdamHyper) -> Result<()> {
    let count = params.param_count();
    if grads.param_count() != count || state.m.len() != count || state.v.len() != count {
        return Err(DppError::Contract("optimizer state does not match parameter shapes".into()));
    }
    state.t += 1;
    let t = state.t;
    for (((p, &g), m), v) in params.values_mut().zip(grads.values()).zip(&mut state.m).zip(&mut state.v) {
        let (np, nm, nv) = hyper.update(*p, g, *m, *v, t);
        *p = np;
        *m = nm;
        *v = nv;
    }
    Ok(())
}
