use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run_on, ExperimentConfig, HarnessError, Result, RunSummary};
use crate::parallel::{self, Execution};

/// A compare file: the configurations to run side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub runs: Vec<ExperimentConfig>,
    /// Allow configurations that differ in more than optimizer and head.
    #[serde(default)]
    pub allow_model_mismatch: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub optimizer: String,
    pub head: String,
    pub seeds: Vec<u64>,
    pub train_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub median_train_loss: f64,
    pub median_test_accuracy: f64,
    /// Per-seed wall time; informational only.
    pub wall_time_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

fn check_comparable(configs: &[ExperimentConfig]) -> Result<()> {
    let Some(first) = configs.first() else {
        return Ok(());
    };
    for c in &configs[1..] {
        let mut diffs = Vec::new();
        if c.dataset != first.dataset {
            diffs.push("dataset");
        }
        if !c.model.same_body(&first.model) {
            diffs.push("model");
        }
        if c.schedule != first.schedule {
            diffs.push("schedule");
        }
        if !diffs.is_empty() {
            return Err(HarnessError::Mismatch(format!(
                "{} differs from {} in {}; set allow_model_mismatch to compare anyway",
                c.label(),
                first.label(),
                diffs.join(", ")
            )));
        }
    }
    Ok(())
}

/// Run every configuration under every seed and tabulate medians. Rows
/// follow the input order; `exec` only decides whether runs overlap.
pub fn compare(
    configs: &[ExperimentConfig],
    seeds: &[u64],
    allow_model_mismatch: bool,
    base: &Path,
    exec: Execution,
) -> Result<ComparisonTable> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(HarnessError::Config("compare needs at least one configuration and one seed".into()));
    }
    if !allow_model_mismatch {
        check_comparable(configs)?;
    }
    let mut data = Vec::with_capacity(configs.len());
    for c in configs {
        c.validate()?;
        data.push(c.dataset.load(base)?);
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<RunSummary>> = parallel::map(exec, jobs, |(i, seed)| {
        let mut c = configs[i].clone();
        c.seed = seed;
        let (train, test) = &data[i];
        run_on(&c, train, test, |_, _| {}).map(|r| r.log.summary)
    });
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(configs.len());
    for c in configs {
        let mut train_loss = Vec::with_capacity(seeds.len());
        let mut test_accuracy = Vec::with_capacity(seeds.len());
        let mut wall_time_s = Vec::with_capacity(seeds.len());
        for _ in seeds {
            let s = results.next().expect("one result per job")?;
            train_loss.push(s.final_train_loss);
            test_accuracy.push(s.final_test_accuracy);
            wall_time_s.push(s.wall_time_s);
        }
        rows.push(ComparisonRow {
            label: c.label(),
            optimizer: c.optimizer.kind_name().to_string(),
            head: serde_json::to_value(c.model.head)?.as_str().unwrap_or_default().to_string(),
            seeds: seeds.to_vec(),
            median_train_loss: median(&train_loss),
            median_test_accuracy: median(&test_accuracy),
            train_loss,
            test_accuracy,
            wall_time_s,
        });
    }
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Fixed-width text table.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>16}  {:>18}", "config", "median train loss", "median test acc");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>16.6}  {:>18.4}",
                r.label, r.median_train_loss, r.median_test_accuracy
            );
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "optimizer", "head", "seeds", "median_train_loss", "median_test_accuracy"])?;
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            w.write_record([
                r.label.clone(),
                r.optimizer.clone(),
                r.head.clone(),
                seeds.join(";"),
                r.median_train_loss.to_string(),
                r.median_test_accuracy.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// `comparison.csv` and `comparison.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| HarnessError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let p = dir.join("comparison.csv");
        std::fs::write(&p, self.to_csv()?).map_err(io(&p))?;
        let p = dir.join("comparison.json");
        std::fs::write(&p, serde_json::to_string_pretty(self)?).map_err(io(&p))?;
        Ok(())
    }
}
