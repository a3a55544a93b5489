//! Datasets: synthetic Gaussian blobs, IDX and CSV loaders, stratified
//! splits, seeded batching and opt-in standardization.

mod batch;
mod csv_file;
mod idx;

pub use batch::BatchIterator;
pub use csv_file::{load_csv, parse_csv};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{what}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { what: String, expected: u32, found: u32 },
    #[error("{what}: truncated, needed {needed} bytes, found {found}")]
    Truncated { what: String, needed: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Features `[num_samples, feature_dim]` with one class index per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rank() != 2 {
            return Err(DataError::Invalid(format!(
                "features must be [samples, dim], got shape {:?}",
                features.shape()
            )));
        }
        if features.shape()[0] != labels.len() {
            return Err(DataError::CountMismatch {
                images: features.shape()[0],
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    /// Rows `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new(vec![indices.len(), d], data).expect("row length"), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (features, labels) = self.gather(indices);
        Dataset {
            features,
            labels,
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Gaussian clusters with standard deviation `spread` around fixed means
/// drawn uniformly on the radius-2 sphere. Sample `i` belongs to class
/// `i % num_classes`.
pub fn make_synthetic_blobs(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || feature_dim == 0 {
        return Err(DataError::Invalid("blob counts must be positive".into()));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(DataError::Invalid(format!("spread must be positive, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(num_classes);
    while means.len() < num_classes {
        let v: Vec<f64> = (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::tensor::norm(&v);
        if n > 0.0 {
            means.push(v.into_iter().map(|x| 2.0 * x / n).collect::<Vec<f64>>());
        }
    }
    let total = num_classes * samples_per_class;
    let mut data = Vec::with_capacity(total * feature_dim);
    let mut labels = Vec::with_capacity(total);
    for i in 0..total {
        let c = i % num_classes;
        for &m in &means[c] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(m + spread * z);
        }
        labels.push(c);
    }
    Dataset::new(Tensor::new(vec![total, feature_dim], data).expect("blob size"), labels, num_classes)
}

/// Disjoint train/test partition, stratified by class when every class has
/// at least two samples. Both halves keep the original row order.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(DataError::Invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = dataset.class_counts();
    let stratify = counts.iter().all(|&c| c == 0 || c >= 2);
    let mut test = Vec::new();
    if stratify {
        for class in 0..dataset.num_classes {
            let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == class).collect();
            if idx.is_empty() {
                continue;
            }
            idx.shuffle(&mut rng);
            let k = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
            test.extend_from_slice(&idx[..k]);
        }
    } else {
        let mut idx: Vec<usize> = (0..dataset.len()).collect();
        idx.shuffle(&mut rng);
        let k = (dataset.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k.min(idx.len())]);
    }
    test.sort_unstable();
    let mut in_test = vec![false; dataset.len()];
    for &i in &test {
        in_test[i] = true;
    }
    let train: Vec<usize> = (0..dataset.len()).filter(|&i| !in_test[i]).collect();
    if train.is_empty() || test.is_empty() {
        return Err(DataError::Invalid(format!(
            "split of {} samples at fraction {test_fraction} leaves an empty side",
            dataset.len()
        )));
    }
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

/// Per-feature mean and standard deviation, fitted on one split and applied
/// to any other.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Constant features get unit scale so they map to zero.
    pub fn fit(train: &Dataset) -> Self {
        let (n, d) = (train.len(), train.feature_dim());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(train.features.row(i)) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((v, x), m) in var.iter_mut().zip(train.features.row(i)).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n.max(1) as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        let d = data.feature_dim();
        for (k, x) in data.features.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *x = (*x - self.mean[j]) / self.std[j];
        }
    }
}
