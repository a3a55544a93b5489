use serde::{Deserialize, Serialize};

use super::{gradient, AdamHyper, LrSchedule, OptimError, Result, StepReport};
use crate::params::{ParamRole, ParamStore};
use crate::tensor::Gradients;

/// Exponential moving average `beta * prev + (1 - beta) * x` together with
/// its bias-corrected value at 1-based step `t`.
///
/// The corrected value is formed from `prev` and `x` directly, so at `t = 1`
/// (where `prev = 0`) it reproduces `x` bit for bit.
pub(crate) fn ema_corrected(prev: f64, x: f64, beta: f64, t: u64) -> (f64, f64) {
    let raw = beta * prev + (1.0 - beta) * x;
    let correction = 1.0 - beta.powi(i32::try_from(t).unwrap_or(i32::MAX));
    let gain = (1.0 - beta) / correction;
    (raw, beta * prev / correction + gain * x)
}

/// One coordinate-wise Adam update at 1-based step `t`. Returns the
/// bias-corrected moments `(m_hat, v_hat)` used for the update.
pub fn adam_scalar_step(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, hyper: &AdamHyper, t: u64, lr: f64) -> (f64, f64) {
    let AdamHyper { beta1, beta2, epsilon } = *hyper;
    let (m_new, m_hat) = ema_corrected(*m, g, beta1, t);
    let (v_new, v_hat) = ema_corrected(*v, g * g, beta2, t);
    *m = m_new;
    *v = v_new;
    let denom = v_hat.sqrt() + epsilon;
    if denom != 0.0 {
        *theta -= lr * m_hat / denom;
    }
    (m_hat, v_hat)
}

/// Per-coordinate first and second moments of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamSlots {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamSlots {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub(crate) fn apply(&mut self, theta: &mut [f64], grad: &[f64], hyper: &AdamHyper, t: u64, lr: f64) {
        for (((th, &g), m), v) in theta.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            adam_scalar_step(th, g, m, v, hyper, t, lr);
        }
    }
}

/// Vanilla Adam over every parameter, with optional L2 decay on the unit
/// weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub lr: LrSchedule,
    pub weight_decay: f64,
    pub t: u64,
    pub slots: Vec<AdamSlots>,
}

impl Adam {
    pub fn new(store: &ParamStore, hyper: AdamHyper, lr: LrSchedule, weight_decay: f64) -> Result<Self> {
        hyper.validate()?;
        if !(weight_decay >= 0.0) {
            return Err(OptimError::Config(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(Self {
            hyper,
            lr,
            weight_decay,
            t: 0,
            slots: store.iter().map(|(_, p)| AdamSlots::zeros(p.value.len())).collect(),
        })
    }

    /// Number of second-moment scalars held for a parameter.
    pub fn second_moment_len(&self, id: crate::params::ParamId) -> usize {
        self.slots[id.0].v.len()
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<StepReport> {
        let ids: Vec<_> = store.ids().collect();
        let mut effective = Vec::with_capacity(ids.len());
        for &id in &ids {
            let g = gradient(store, grads, id)?;
            let p = store.get(id);
            let mut g = g.data().to_vec();
            if self.weight_decay > 0.0 && p.role == ParamRole::UnitVectors {
                for (gi, wi) in g.iter_mut().zip(p.value.data()) {
                    *gi += self.weight_decay * wi;
                }
            }
            effective.push(g);
        }
        self.t += 1;
        let lr = self.lr.for_step(self.t);
        for (id, g) in ids.into_iter().zip(effective) {
            let theta = store.get_mut(id).value.data_mut();
            self.slots[id.0].apply(theta, &g, &self.hyper, self.t, lr);
        }
        Ok(StepReport {
            step: self.t,
            decomposition: Vec::new(),
        })
    }
}
