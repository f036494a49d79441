//! Batch driver for federated experiments: config parsing, commands and
//! result files.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use qfl_core::condense::condense;
use qfl_core::data::{scale_to_range, write_csv, GENOMIC_LENGTH};
use qfl_core::fed::{run_experiment, ExperimentOutcome};
use serde_json::json;

pub use config::{CondenseConfig, RunConfig};

/// Exit code 2: the config was rejected before any compute.
pub const EXIT_SCHEMA: i32 = 2;
/// Exit code 1: failure while running.
pub const EXIT_RUNTIME: i32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Schema(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn schema(field: &str, message: impl std::fmt::Display) -> Self {
        CliError::Schema(format!("invalid `{field}`: {message}"))
    }

    pub fn from_validation(e: qfl_core::Error) -> Self {
        CliError::Schema(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Schema(_) => EXIT_SCHEMA,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<qfl_core::Error> for CliError {
    fn from(e: qfl_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ECHO_FILE: &str = "config.echo.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Loads a run config and applies the command-line overrides.
pub fn load_run_config(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `qfl run`: executes the experiment and writes rounds.csv, summary.json
/// and config.echo.json into the output directory.
pub fn cmd_run(cfg: &RunConfig) -> Result<ExperimentOutcome, CliError> {
    let dataset = cfg.source().load()?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let checkpoint = cfg.checkpoint.then(|| cfg.output_dir.join(CHECKPOINT_FILE));
    let outcome = run_experiment(&cfg.plan(), &dataset, checkpoint.as_deref())?;

    let dir = &cfg.output_dir;
    output::write_rounds_csv(&dir.join(ROUNDS_FILE), &outcome.records)?;
    output::write_json(&dir.join(SUMMARY_FILE), &output::summary_json(cfg, &outcome.summary, outcome.records.len()))?;
    output::write_json(&dir.join(ECHO_FILE), &serde_json::to_value(cfg).expect("config serialises"))?;
    Ok(outcome)
}

pub fn load_condense_config(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<CondenseConfig, CliError> {
    let mut cfg = CondenseConfig::from_path(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// `qfl condense`: writes `<name>.csv` and provenance.json. Inputs with
/// values outside [0, 1] are min-max scaled first.
pub fn cmd_condense(cfg: &CondenseConfig) -> Result<qfl_core::condense::CondenseOutput, CliError> {
    let mut dataset = cfg.source().load()?;
    let rescaled = dataset.features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v));
    if rescaled {
        dataset = scale_to_range(&dataset, 1.0)?;
    }
    let spec = cfg.spec();
    let out = condense(&dataset, &spec)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    let csv_path = cfg.output_dir.join(format!("{}.csv", cfg.name));
    write_csv(&csv_path, &out.synthetic)?;
    let final_losses: Vec<Option<f64>> = out.loss_traces.iter().map(|t| t.last().copied()).collect();
    let provenance = json!({
        "name": cfg.name,
        "seed": cfg.seed,
        "spec": spec,
        "source": cfg.data_path,
        "source_rows": dataset.len(),
        "condensed_rows": out.synthetic.len(),
        "class_count": dataset.class_count,
        "size_ratio": out.size_ratio,
        "rescaled_to_unit_range": rescaled,
        "final_losses": final_losses,
        "output": csv_path,
    });
    output::write_json(&cfg.output_dir.join(PROVENANCE_FILE), &provenance)?;
    Ok(out)
}

/// `qfl gen-genomic`: `count` sequences, labels alternating 0/1.
pub fn cmd_gen_genomic(count: usize, seed: u64, length: Option<usize>, out: &Path) -> Result<(), CliError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    config::generate_genomic_file(count, seed, length.unwrap_or(GENOMIC_LENGTH), out)
}
