use serde::{Deserialize, Serialize};

use super::{NnError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

/// Batch normalization without scale or shift.
///
/// Train mode standardizes with batch statistics (population variance) and
/// folds them into the running estimates; eval mode reads the running
/// estimates only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl BatchNormState {
    pub fn new(features: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(NnError::Config(format!(
                "batch norm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        if !(epsilon >= 0.0) {
            return Err(NnError::Config(format!(
                "batch norm epsilon must be non-negative, got {epsilon}"
            )));
        }
        Ok(Self {
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            epsilon,
            mode: Mode::Train,
        })
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward<'t>(&mut self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.features() {
            return Err(NnError::Config(format!(
                "batch norm over {} features got input of shape {shape:?}",
                self.features()
            )));
        }
        match self.mode {
            Mode::Train => {
                let (y, mean, var) = x.batch_norm(self.epsilon)?;
                let mu = self.momentum;
                for (r, b) in self.running_mean.iter_mut().zip(&mean) {
                    *r = mu * *r + (1.0 - mu) * b;
                }
                for (r, b) in self.running_var.iter_mut().zip(&var) {
                    *r = mu * *r + (1.0 - mu) * b;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = tape.constant(Tensor::vector(self.running_mean.clone()));
                let inv_std = tape.constant(Tensor::vector(
                    self.running_var
                        .iter()
                        .map(|v| 1.0 / (v + self.epsilon).sqrt())
                        .collect(),
                ));
                Ok(x.sub(&mean)?.mul(&inv_std)?)
            }
        }
    }
}

/// Tensor-in, tensor-out batch normalization.
pub fn batchnorm(x: &Tensor, state: &mut BatchNormState) -> Result<Tensor> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    Ok(state.forward(&tape, xv)?.value())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorError;

    fn column_stats(t: &Tensor, c: usize) -> (f64, f64) {
        let col = t.column(c);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn two_point_column() {
        let mut bn = BatchNormState::new(1, 0.9, 0.0).unwrap();
        let x = Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap();
        assert_eq!(batchnorm(&x, &mut bn).unwrap().data(), &[-1.0, 1.0]);
        assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_column_is_zero() {
        let mut bn = BatchNormState::new(1, 0.9, 1e-5).unwrap();
        let x = Tensor::matrix(2, 1, vec![5.0, 5.0]).unwrap();
        assert_eq!(batchnorm(&x, &mut bn).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn single_row_rejected_in_train_mode() {
        let mut bn = BatchNormState::new(2, 0.9, 1e-5).unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        assert_eq!(
            batchnorm(&x, &mut bn),
            Err(NnError::Tensor(TensorError::BatchTooSmall(1)))
        );
        bn.mode = Mode::Eval;
        assert!(batchnorm(&x, &mut bn).is_ok());
    }

    #[test]
    fn eval_uses_running_stats_only() {
        let mut bn = BatchNormState::new(1, 0.5, 0.0).unwrap();
        bn.running_mean = vec![2.0];
        bn.running_var = vec![4.0];
        bn.mode = Mode::Eval;
        let x = Tensor::matrix(2, 1, vec![4.0, 0.0]).unwrap();
        assert_eq!(batchnorm(&x, &mut bn).unwrap().data(), &[1.0, -1.0]);
        assert_eq!(bn.running_mean, vec![2.0]);
    }

    #[test]
    fn train_output_standardized_and_shift_preserves_variance() {
        let mut bn = BatchNormState::new(3, 0.9, 0.0).unwrap();
        let data: Vec<f64> = (0..24).map(|i| ((i * 7919) % 31) as f64 * 0.37 - 2.0).collect();
        let x = Tensor::matrix(8, 3, data).unwrap();
        let y = batchnorm(&x, &mut bn).unwrap();
        for c in 0..3 {
            let (m, v) = column_stats(&y, c);
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-9);
            let shifted = y.add(&Tensor::vector(vec![0.7, -3.0, 11.0])).unwrap();
            let (_, vs) = column_stats(&shifted, c);
            assert!((vs - v).abs() < 1e-12);
        }
        assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn bad_configuration() {
        assert!(BatchNormState::new(2, 1.0, 1e-5).is_err());
        assert!(BatchNormState::new(2, 0.9, -1.0).is_err());
    }
}
