//! Experiment driver around `fedcate-core`: a declarative TOML config run
//! through generate/train/sweep pipelines, with machine-readable reports.
//!
//! The library half exists so integration tests can drive the exact code the
//! binary runs; `main.rs` only parses arguments and maps errors to exit
//! codes (0 success, 1 config error, 2 runtime error).

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{parse_config, ExperimentConfig, Mode};
pub use experiment::{
    run_alpha_sweep, run_experiment, synthetic_datasets, ExperimentOutput, ExperimentReport,
};
pub use output::{emit_report, load_report, render_summary, write_run_meta, write_sweep_csv, RunMeta};

/// Top-level error split: configuration problems exit 1, everything that
/// goes wrong after a valid config exits 2.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}
