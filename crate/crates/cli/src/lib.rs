//! Experiment runner: TOML configs in, per-iteration metrics CSV and a JSON summary out.

pub mod config;
pub mod experiment;
pub mod output;

use std::path::{Path, PathBuf};
use thiserror::Error;

pub use config::{ExperimentConfig, ScenarioKind, SolverKind, SweepAxis, SweepConfig};
pub use experiment::{iterations_to_reach, run_experiment, run_solver, ExperimentOutput, Row};

/// Overrides the output directory named in the config.
pub const OUTPUT_DIR_ENV: &str = "GBPCAL_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
        }
    }
}

pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output.clone())
}

/// Runs a parsed config and writes its artifacts to `dir`; returns the result table.
pub fn execute(cfg: &ExperimentConfig, dir: &Path, verbose: bool) -> Result<Vec<String>, CliError> {
    let mut progress = |line: &str| {
        if verbose {
            eprintln!("{line}");
        }
    };
    let out = run_experiment(cfg, &mut progress)?;
    let summary = output::write_artifacts(dir, &cfg.to_toml(), &out)?;
    Ok(summary.iter().map(output::table_line).collect())
}
