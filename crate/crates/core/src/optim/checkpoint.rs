use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{OptimError, Optimizer, Result};
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON snapshot of an optimizer (step counter, all moments and
/// hyperparameters), optionally with the parameters it was driving.
///
/// Floats are written with shortest round-trip formatting, so loading a
/// saved checkpoint reproduces every value bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerCheckpoint {
    pub version: u32,
    pub optimizer: Optimizer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamStore>,
}

impl OptimizerCheckpoint {
    pub fn new(optimizer: Optimizer, params: Option<ParamStore>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            optimizer,
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| OptimError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text).map_err(|e| OptimError::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(OptimError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| OptimError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| OptimError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{AdamHyper, LrSchedule, NdAdam, ParamGroup, Sgd};
    use crate::params::ParamRole;
    use crate::tensor::{Gradients, Tensor};

    fn trained() -> (ParamStore, NdAdam) {
        let mut s = ParamStore::new();
        s.add(
            "w",
            ParamRole::UnitVectors,
            Tensor::new(vec![3, 2], vec![0.1, 0.7, -0.3, 0.2, 0.9, -1.1]).unwrap(),
        );
        s.add("b", ParamRole::Scalars, Tensor::vector(vec![0.3, -0.2]));
        let group = ParamGroup::from_roles(&s, LrSchedule::cosine(0.05, 40), LrSchedule::constant(0.001)).unwrap();
        let mut o = NdAdam::new(&mut s, group, AdamHyper::default()).unwrap();
        for k in 0..7 {
            let mut g = Gradients::default();
            for (id, p) in s.iter() {
                let d = (0..p.value.len()).map(|i| ((k * 7 + i) as f64 * 1.37).sin() / 3.0).collect();
                g.insert(id, Tensor::new(p.value.shape().to_vec(), d).unwrap());
            }
            o.step(&mut s, &g).unwrap();
        }
        (s, o)
    }

    #[test]
    fn nd_adam_round_trip_is_exact() {
        let (s, o) = trained();
        let ck = OptimizerCheckpoint::new(Optimizer::NdAdam(o), Some(s));
        let back = OptimizerCheckpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn sgd_round_trip_through_file() {
        let (s, _) = trained();
        let o = Sgd::new(&s, LrSchedule::constant(0.1), 0.9, 1e-3).unwrap();
        let ck = OptimizerCheckpoint::new(Optimizer::Sgd(o), None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        assert_eq!(OptimizerCheckpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let (s, o) = trained();
        let mut ck = OptimizerCheckpoint::new(Optimizer::NdAdam(o), Some(s));
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(matches!(
            OptimizerCheckpoint::from_json(&text),
            Err(OptimError::Checkpoint(_))
        ));
    }
}
