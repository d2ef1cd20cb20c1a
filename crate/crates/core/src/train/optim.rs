//! Training objectives and the Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{l2_norm, GridField};
use crate::stencil::PdeProblem;

/// Entries of the reference below this magnitude are skipped by
/// [`legacy_loss`].
pub const LEGACY_EPS: f64 = 1e-12;

/// `||(1 - M)(f - A x)||_2`.
pub fn residual_loss(problem: &PdeProblem, x: &GridField) -> Result<f64> {
    Ok(l2_norm(&problem.residual(x)?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegacyLoss {
    pub value: f64,
    /// Entries skipped because the reference is (numerically) zero.
    pub excluded: usize,
}

/// Mean elementwise relative error `mean(|x - y| / |y|)` over entries
/// with `|y| >= 1e-12`.
pub fn legacy_loss(x: &GridField, y: &GridField) -> Result<LegacyLoss> {
    y.check_same(x.n())?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &b) in x.as_slice().iter().zip(y.as_slice()) {
        if b.abs() < LEGACY_EPS {
            continue;
        }
        sum += (a - b).abs() / b.abs();
        used += 1;
    }
    Ok(LegacyLoss {
        value: if used == 0 { 0.0 } else { sum / used as f64 },
        excluded: x.as_slice().len() - used,
    })
}

/// Subgradient of [`legacy_loss`] with respect to `x`.
pub(crate) fn legacy_loss_grad(x: &GridField, y: &GridField) -> Vec<f64> {
    let used = y.as_slice().iter().filter(|b| b.abs() >= LEGACY_EPS).count().max(1) as f64;
    x.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&a, &b)| {
            if b.abs() < LEGACY_EPS || a == b {
                0.0
            } else {
                (a - b).signum() / (b.abs() * used)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self::with_config(len, AdamConfig::default())
    }

    pub fn with_config(len: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    let AdamConfig { beta1, beta2, eps } = state.cfg;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}
