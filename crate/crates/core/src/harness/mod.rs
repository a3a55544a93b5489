//! Config-driven training runs, multi-seed comparisons and the softmax
//! gradient probe.

mod compare;
mod config;
mod probe;
mod run;

pub use compare::{compare, median, CompareConfig, ComparisonRow, ComparisonTable};
pub use config::{DatasetSpec, ExperimentConfig, ModelConfig, OptimizerSpec, ScheduleSpec, OUTPUT_DIR_ENV};
pub use probe::{probe_csv, probe_softmax, ProbeConfig, ProbeRow, DEFAULT_ETAS};
pub use run::{diagnostics_csv, metrics_csv, run, run_observed, run_on, write_outputs, EpochMetrics, RunLog, RunResult, RunSummary};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configurations are not comparable: {0}")]
    Mismatch(String),
    #[error("non-finite loss {value} at step {step}; aborting")]
    NonFinite { step: u64, value: f64 },
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Diagnostics(#[from] crate::diagnostics::DiagnosticsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;
