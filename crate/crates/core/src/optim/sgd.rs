use serde::{Deserialize, Serialize};

use super::{gradient, LrSchedule, OptimError, Result, StepReport, UpdateParts};
use crate::params::{ParamRole, ParamStore};
use crate::tensor::{Gradients, Tensor};

/// SGD with heavy-ball momentum and L2 decay `lambda / 2 * |w|^2` on the unit
/// weight vectors.
///
/// The velocity is kept as two linear parts, one accumulating loss gradients
/// and one accumulating decay gradients, so every step can report the
/// displacement `delta = delta_loss + delta_decay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub t: u64,
    velocity_loss: Vec<Vec<f64>>,
    velocity_decay: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, lr: LrSchedule, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(OptimError::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        if !(weight_decay >= 0.0) {
            return Err(OptimError::Config(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            t: 0,
            velocity_loss: zeros.clone(),
            velocity_decay: zeros,
        })
    }

    /// Full velocity of a parameter, loss and decay parts summed.
    pub fn velocity(&self, id: crate::params::ParamId) -> Vec<f64> {
        self.velocity_loss[id.0]
            .iter()
            .zip(&self.velocity_decay[id.0])
            .map(|(a, b)| a + b)
            .collect()
    }

    fn decays(&self, role: ParamRole) -> bool {
        self.weight_decay > 0.0 && role == ParamRole::UnitVectors
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<StepReport> {
        if self.velocity_loss.len() != store.len() {
            return Err(OptimError::Length(self.velocity_loss.len(), store.len()));
        }
        let ids: Vec<_> = store.ids().collect();
        for &id in &ids {
            gradient(store, grads, id)?;
        }
        self.t += 1;
        let lr = self.lr.for_step(self.t);
        let mu = self.momentum;
        let mut report = StepReport {
            step: self.t,
            decomposition: Vec::new(),
        };
        for id in ids {
            let g = gradient(store, grads, id)?;
            let decays = self.decays(store.get(id).role);
            let p = store.get_mut(id);
            let vl = &mut self.velocity_loss[id.0];
            let vd = &mut self.velocity_decay[id.0];
            let mut dl = Vec::with_capacity(vl.len());
            let mut dp = Vec::with_capacity(vl.len());
            for (((w, &gi), l), d) in p.value.data_mut().iter_mut().zip(g.data()).zip(vl.iter_mut()).zip(vd.iter_mut()) {
                *l = mu * *l + gi;
                if decays {
                    *d = mu * *d + self.weight_decay * *w;
                }
                let (step_l, step_d) = (-lr * *l, -lr * *d);
                *w += step_l + step_d;
                dl.push(step_l);
                dp.push(step_d);
            }
            if decays {
                let shape = p.value.shape().to_vec();
                report.decomposition.push((
                    id,
                    UpdateParts {
                        loss: Tensor::new(shape.clone(), dl).expect("shape of an existing tensor"),
                        decay: Tensor::new(shape, dp).expect("shape of an existing tensor"),
                    },
                ));
            }
        }
        Ok(report)
    }
}
