use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{LrSchedule, OptimError, Result};
use crate::params::{ParamId, ParamRole, ParamStore};

/// Partition of the trainable parameters into unit-norm weight vectors and
/// the remaining scalars, each with its own learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub vector_params: Vec<ParamId>,
    pub scalar_params: Vec<ParamId>,
    pub lr_vector: LrSchedule,
    pub lr_scalar: LrSchedule,
}

impl ParamGroup {
    pub fn new(
        store: &ParamStore,
        vector_params: Vec<ParamId>,
        scalar_params: Vec<ParamId>,
        lr_vector: LrSchedule,
        lr_scalar: LrSchedule,
    ) -> Result<Self> {
        let v: BTreeSet<_> = vector_params.iter().copied().collect();
        let s: BTreeSet<_> = scalar_params.iter().copied().collect();
        if v.len() != vector_params.len() || s.len() != scalar_params.len() {
            return Err(OptimError::Partition("duplicate parameter".into()));
        }
        if let Some(id) = v.iter().chain(&s).find(|id| id.0 >= store.len()) {
            return Err(OptimError::Partition(format!("unknown parameter {id}")));
        }
        if let Some(id) = v.intersection(&s).next() {
            return Err(OptimError::Partition(format!(
                "{} is in both the vector and scalar sets",
                store.get(*id).name
            )));
        }
        for id in store.ids() {
            if !v.contains(&id) && !s.contains(&id) {
                return Err(OptimError::Partition(format!(
                    "{} is in neither set",
                    store.get(id).name
                )));
            }
        }
        for &id in &vector_params {
            let p = store.get(id);
            if p.value.rank() > 2 || p.vector_dim() < 2 {
                return Err(OptimError::Partition(format!(
                    "{} cannot be split into weight vectors of dimension >= 2 (shape {:?})",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(Self {
            vector_params,
            scalar_params,
            lr_vector,
            lr_scalar,
        })
    }

    /// Partition by each parameter's declared role.
    pub fn from_roles(store: &ParamStore, lr_vector: LrSchedule, lr_scalar: LrSchedule) -> Result<Self> {
        Self::new(
            store,
            store.ids_with_role(ParamRole::UnitVectors),
            store.ids_with_role(ParamRole::Scalars),
            lr_vector,
            lr_scalar,
        )
    }

    /// Every parameter on the scalar path.
    pub fn scalars_only(store: &ParamStore, lr_scalar: LrSchedule) -> Result<Self> {
        Self::new(store, Vec::new(), store.ids().collect(), lr_scalar, lr_scalar)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", ParamRole::UnitVectors, Tensor::zeros(vec![3, 2]));
        s.add("b", ParamRole::Scalars, Tensor::zeros(vec![2]));
        s
    }

    #[test]
    fn partition_rules() {
        let s = store();
        let lr = LrSchedule::constant(0.1);
        assert!(ParamGroup::from_roles(&s, lr, lr).is_ok());
        assert!(ParamGroup::scalars_only(&s, lr).is_ok());
        assert!(ParamGroup::new(&s, vec![ParamId(0)], vec![ParamId(0), ParamId(1)], lr, lr).is_err());
        assert!(ParamGroup::new(&s, vec![ParamId(0)], vec![], lr, lr).is_err());
        assert!(ParamGroup::new(&s, vec![ParamId(0), ParamId(1)], vec![], lr, lr).is_ok());
    }

    #[test]
    fn vectors_need_two_dimensions() {
        let mut s = ParamStore::new();
        s.add("w", ParamRole::UnitVectors, Tensor::zeros(vec![1, 4]));
        let lr = LrSchedule::constant(0.1);
        assert!(matches!(
            ParamGroup::from_roles(&s, lr, lr),
            Err(OptimError::Partition(_))
        ));
    }
}
