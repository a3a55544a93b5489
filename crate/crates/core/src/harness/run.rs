use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError, OptimizerSpec, Result};
use crate::data::{BatchIterator, Dataset};
use crate::diagnostics::{measure_units, DiagnosticsRecord, DiagnosticsRecorder};
use crate::nn::Model;
use crate::optim::{Adam, AdamHyper, LrSchedule, NdAdam, Optimizer, OptimizerCheckpoint, ParamGroup, ScheduleKind, Sgd};
use crate::params::Param;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub optimizer: String,
    pub seed: u64,
    pub epochs: usize,
    pub steps: u64,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub final_test_loss: f64,
    pub final_test_accuracy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochMetrics>,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub summary: RunSummary,
}

/// A finished run: its log plus the trained model and optimizer.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub log: RunLog,
    pub model: Model,
    pub optimizer: Optimizer,
}

fn schedule(kind: ScheduleKind, alpha0: f64, total: u64) -> LrSchedule {
    LrSchedule {
        alpha0,
        total_steps: total,
        kind,
    }
}

fn build_optimizer(config: &ExperimentConfig, model: &mut Model, total_steps: u64) -> Result<Optimizer> {
    let kind = config.schedule.kind;
    Ok(match config.optimizer {
        OptimizerSpec::Sgd {
            lr,
            momentum,
            weight_decay,
        } => Optimizer::Sgd(Sgd::new(&model.params, schedule(kind, lr, total_steps), momentum, weight_decay)?),
        OptimizerSpec::Adam {
            lr,
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } => Optimizer::Adam(Adam::new(
            &model.params,
            AdamHyper { beta1, beta2, epsilon },
            schedule(kind, lr, total_steps),
            weight_decay,
        )?),
        OptimizerSpec::NdAdam {
            lr_vector,
            lr_scalar,
            beta1,
            beta2,
            epsilon,
        } => {
            let group = ParamGroup::from_roles(
                &model.params,
                schedule(kind, lr_vector, total_steps),
                schedule(kind, lr_scalar, total_steps),
            )?;
            Optimizer::NdAdam(NdAdam::new(&mut model.params, group, AdamHyper { beta1, beta2, epsilon })?)
        }
    })
}

/// Train as configured, loading data relative to the current directory.
pub fn run(config: &ExperimentConfig) -> Result<RunResult> {
    run_observed(config, Path::new("."), |_, _| {})
}

/// Train as configured; `observe` sees the model after every optimizer step.
pub fn run_observed<F>(config: &ExperimentConfig, base: &Path, observe: F) -> Result<RunResult>
where
    F: FnMut(u64, &Model),
{
    config.validate()?;
    let (train, test) = config.dataset.load(base)?;
    run_on(config, &train, &test, observe)
}

/// Train on already loaded data.
pub fn run_on<F>(config: &ExperimentConfig, train: &Dataset, test: &Dataset, mut observe: F) -> Result<RunResult>
where
    F: FnMut(u64, &Model),
{
    config.validate()?;
    config.validate_with_data(train)?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let spec = config.model.spec(train.feature_dim(), train.num_classes);
    let mut model = Model::new(&spec, &mut rng)?;
    let batches_per_epoch = train.len().div_ceil(config.schedule.batch_size) as u64;
    let total_steps = batches_per_epoch * config.schedule.epochs as u64;
    let mut optimizer = build_optimizer(config, &mut model, total_steps)?;

    let mut batches = BatchIterator::new(train, config.schedule.batch_size, config.seed.wrapping_add(1))?;
    let mut recorder = DiagnosticsRecorder::new(config.diagnostics.clone());
    let watched: Vec<usize> = model.hidden_layers().filter(|&l| config.diagnostics.selects(l)).collect();
    let mut epochs = Vec::with_capacity(config.schedule.epochs);

    for epoch in 1..=config.schedule.epochs {
        for (x, y) in batches.next_epoch() {
            let step = optimizer.steps() + 1;
            let tape = Tape::new();
            let loss = model.loss(&tape, &x, &y)?;
            let value = loss.item().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(HarnessError::NonFinite { step, value });
            }
            let grads = tape.backward(loss)?;
            drop(tape);
            if !grads.all_finite() {
                return Err(HarnessError::NonFinite { step, value: f64::NAN });
            }
            let sample = config.diagnostics.samples(step);
            let before: Vec<Param> = if sample {
                watched
                    .iter()
                    .map(|&l| model.params.get(model.layers[l].weight).clone())
                    .collect()
            } else {
                Vec::new()
            };
            let report = optimizer.step(&mut model.params, &grads)?;
            if !model.params.all_finite() {
                return Err(HarnessError::NonFinite { step, value: f64::NAN });
            }
            if sample {
                for (&l, b) in watched.iter().zip(&before) {
                    let id = model.layers[l].weight;
                    let grad = grads.get(id).expect("every parameter has a gradient");
                    let units = measure_units(b, model.params.get(id), grad, report.parts(id))?;
                    recorder.record_layer(step, &format!("layer{l}"), &units);
                }
            }
            observe(step, &model);
        }
        let tr = model.evaluate(&train.features, &train.labels)?;
        let te = model.evaluate(&test.features, &test.labels)?;
        if !tr.loss.is_finite() || !te.loss.is_finite() {
            return Err(HarnessError::NonFinite {
                step: optimizer.steps(),
                value: if tr.loss.is_finite() { te.loss } else { tr.loss },
            });
        }
        epochs.push(EpochMetrics {
            epoch,
            step: optimizer.steps(),
            train_loss: tr.loss,
            train_accuracy: tr.accuracy,
            test_loss: te.loss,
            test_accuracy: te.accuracy,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }

    let last = epochs.last().expect("at least one epoch").clone();
    let summary = RunSummary {
        label: config.label(),
        optimizer: config.optimizer.kind_name().to_string(),
        seed: config.seed,
        epochs: config.schedule.epochs,
        steps: optimizer.steps(),
        final_train_loss: last.train_loss,
        final_train_accuracy: last.train_accuracy,
        final_test_loss: last.test_loss,
        final_test_accuracy: last.test_accuracy,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(RunResult {
        log: RunLog {
            epochs,
            diagnostics: recorder.records().to_vec(),
            summary,
        },
        model,
        optimizer,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-epoch metrics without wall time, so identical runs give identical
/// bytes. Wall time goes to `summary.json`.
pub fn metrics_csv(log: &RunLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epoch", "step", "train_loss", "train_accuracy", "test_loss", "test_accuracy"])?;
    for e in &log.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.step.to_string(),
            e.train_loss.to_string(),
            e.train_accuracy.to_string(),
            e.test_loss.to_string(),
            e.test_accuracy.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn diagnostics_csv(config: &ExperimentConfig, log: &RunLog) -> Result<String> {
    let mut rec = DiagnosticsRecorder::new(config.diagnostics.clone());
    log.diagnostics.iter().cloned().for_each(|r| rec.push(r));
    let mut buf = Vec::new();
    rec.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Write `metrics.csv`, `diagnostics.csv`, `summary.json`,
/// `config_echo.json` and `checkpoint.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file = |name: &str| dir.join(name);

    let p = file("metrics.csv");
    std::fs::write(&p, metrics_csv(&result.log)?).map_err(io_err(&p))?;

    let p = file("diagnostics.csv");
    std::fs::write(&p, diagnostics_csv(config, &result.log)?).map_err(io_err(&p))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        #[serde(flatten)]
        summary: &'a RunSummary,
        epochs: &'a [EpochMetrics],
    }
    let p = file("summary.json");
    let text = serde_json::to_string_pretty(&Summary {
        summary: &result.log.summary,
        epochs: &result.log.epochs,
    })?;
    std::fs::write(&p, text).map_err(io_err(&p))?;

    let mut echo = config.clone();
    echo.output_dir = None;
    let p = file("config_echo.json");
    std::fs::write(&p, serde_json::to_string_pretty(&echo)?).map_err(io_err(&p))?;

    OptimizerCheckpoint::new(result.optimizer.clone(), Some(result.model.params.clone())).save(&file("checkpoint.json"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;

    fn config(optimizer: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{
            "dataset": {{"kind": "synthetic", "num_classes": 3, "samples_per_class": 20,
                        "feature_dim": 4, "spread": 0.4}},
            "model": {{"hidden": [8, 8]}},
            "optimizer": {{"kind": "{optimizer}"}},
            "schedule": {{"epochs": 3, "batch_size": 16}},
            "diagnostics": {{"stride": 1}},
            "seed": 5
        }}"#
        ))
        .unwrap()
    }

    #[test]
    fn every_optimizer_trains() {
        for kind in ["sgd", "adam", "nd_adam"] {
            let r = run(&config(kind)).unwrap();
            assert_eq!(r.log.epochs.len(), 3);
            // 48 training rows in batches of 16
            assert_eq!(r.log.summary.steps, 9);
            assert_eq!(r.log.diagnostics.len(), 9 * 2);
            assert!(r.log.summary.final_train_loss.is_finite());
        }
    }

    #[test]
    fn sgd_reports_projection_ratio() {
        let r = run(&config("sgd")).unwrap();
        assert!(r.log.diagnostics.iter().all(|d| d.proj_ratio.is_finite()));
        let r = run(&config("nd_adam")).unwrap();
        assert!(r.log.diagnostics.iter().all(|d| d.proj_ratio.is_nan()));
    }

    #[test]
    fn runs_are_deterministic() {
        let mut c = config("nd_adam");
        c.model.head = HeadKind::BnSoftmax;
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(metrics_csv(&a.log).unwrap(), metrics_csv(&b.log).unwrap());
        assert_eq!(diagnostics_csv(&c, &a.log).unwrap(), diagnostics_csv(&c, &b.log).unwrap());
        assert_eq!(a.model.params, b.model.params);
    }

    #[test]
    fn singleton_batch_is_rejected_before_training() {
        let mut c = config("sgd");
        c.schedule.batch_size = 47;
        assert!(matches!(run(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn divergence_aborts_with_step() {
        let mut c = config("sgd");
        c.optimizer = OptimizerSpec::Sgd {
            lr: 1e6,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        c.model.use_batch_norm = false;
        c.schedule.kind = ScheduleKind::Constant;
        c.schedule.epochs = 50;
        match run(&c) {
            Err(HarnessError::NonFinite { step, .. }) => assert!(step >= 1),
            other => panic!("expected a NaN abort, got {other:?}"),
        }
    }
}
