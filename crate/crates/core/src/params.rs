//! Trainable parameter storage shared by the network and the optimizers.

use serde::{Deserialize, Serialize};

use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

impl std::fmt::Display for ParamId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// How the optimizers address a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Input weight vectors of hidden units. A rank-2 `[fan_in, fan_out]`
    /// tensor contributes one vector per column, a rank-1 tensor is a single
    /// vector.
    UnitVectors,
    /// Everything else (biases, scaling factors).
    Scalars,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub value: Tensor,
}

impl Param {
    /// Number of independent weight vectors this parameter holds.
    pub fn vector_count(&self) -> usize {
        match self.value.rank() {
            2 => self.value.shape()[1],
            _ => 1,
        }
    }

    /// Dimension of each weight vector.
    pub fn vector_dim(&self) -> usize {
        match self.value.rank() {
            2 => self.value.shape()[0],
            _ => self.value.len(),
        }
    }

    pub fn vector(&self, j: usize) -> Vec<f64> {
        match self.value.rank() {
            2 => self.value.column(j),
            _ => self.value.data().to_vec(),
        }
    }

    pub fn set_vector(&mut self, j: usize, values: &[f64]) {
        match self.value.rank() {
            2 => self.value.set_column(j, values),
            _ => self.value.data_mut().copy_from_slice(values),
        }
    }
}

/// Split a gradient tensor of a vector parameter into its per-vector parts.
pub fn vectors_of(t: &Tensor) -> Vec<Vec<f64>> {
    match t.rank() {
        2 => (0..t.shape()[1]).map(|j| t.column(j)).collect(),
        _ => vec![t.data().to_vec()],
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, role: ParamRole, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            role,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_role(&self, role: ParamRole) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.role == role)
            .map(|(id, _)| id)
            .collect()
    }

    /// Put every parameter on `tape` as a leaf, indexed by `ParamId`.
    pub fn register<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.iter()
            .map(|(id, p)| tape.param(id, p.value.clone()))
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}
