use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ndadam::harness::{
    self, probe_csv, probe_softmax, CompareConfig, ExperimentConfig, HarnessError, ProbeConfig, DEFAULT_ETAS,
    OUTPUT_DIR_ENV,
};
use ndadam::parallel::Execution;

#[derive(Parser)]
#[command(name = "ndadam", version, about = "Train, compare and probe ND-Adam at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run every configuration of a compare file under each seed.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds, e.g. 1,2,3.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Compare configurations that differ in more than optimizer and head.
        #[arg(long)]
        allow_model_mismatch: bool,
        /// Run one configuration at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Softmax logit-gradient ratios over a sweep of logit scalings.
    ProbeSoftmax {
        #[arg(long)]
        classes: usize,
        /// Comma-separated scalings; defaults to 1e-4,1e-2,1,1e2,1e3.
        #[arg(long, value_delimiter = ',')]
        etas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        target: usize,
        /// Comma-separated logits; random standard-normal logits otherwise.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        logits: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn output_dir(configured: Option<PathBuf>, fallback: &str) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => configured.unwrap_or_else(|| PathBuf::from(fallback)),
    }
}

fn run_one(path: &Path) -> Result<(), HarnessError> {
    let config = ExperimentConfig::load(path)?;
    let result = harness::run_observed(&config, &config_dir(path), |_, _| {})?;
    let dir = output_dir(config.resolved_output_dir(), "ndadam-run");
    harness::write_outputs(&dir, &config, &result)?;
    let s = &result.log.summary;
    println!(
        "{}: {} steps, train loss {:.6}, test accuracy {:.4} ({:.1}s) -> {}",
        s.label,
        s.steps,
        s.final_train_loss,
        s.final_test_accuracy,
        s.wall_time_s,
        dir.display()
    );
    Ok(())
}

fn run_compare(path: &Path, seeds: &[u64], allow: bool, sequential: bool) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cmp: CompareConfig = serde_json::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::available()
    };
    let table = harness::compare(
        &cmp.runs,
        seeds,
        allow || cmp.allow_model_mismatch,
        &config_dir(path),
        exec,
    )?;
    print!("{}", table.render());
    let dir = output_dir(cmp.output_dir.clone(), "ndadam-compare");
    table.write(&dir)?;
    println!("-> {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run_one(&config),
        Command::Compare {
            config,
            seeds,
            allow_model_mismatch,
            sequential,
        } => run_compare(&config, &seeds, allow_model_mismatch, sequential),
        Command::ProbeSoftmax {
            classes,
            etas,
            target,
            logits,
            seed,
            output,
        } => {
            let config = ProbeConfig {
                classes,
                etas: if etas.is_empty() { DEFAULT_ETAS.to_vec() } else { etas },
                target,
                logits: (!logits.is_empty()).then_some(logits),
                seed,
            };
            probe_softmax(&config).and_then(|rows| probe_csv(&rows)).and_then(|text| match output {
                Some(p) => std::fs::write(&p, text).map_err(|source| HarnessError::Io {
                    path: p.display().to_string(),
                    source,
                }),
                None => {
                    print!("{text}");
                    Ok(())
                }
            })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
