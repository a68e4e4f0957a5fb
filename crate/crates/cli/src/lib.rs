//! Experiment orchestration: configuration files, the three-stage pipeline
//! (pre-finetune → fine-tune → evaluate), checkpoint persistence, and
//! results tables.
//!
//! One experiment = one TOML file; `--set section.key=value` flags override
//! individual keys, so sweeps are grids over diff-able files. Every run
//! writes per-seed checkpoints after each stage and a flat `report.tsv`
//! that the `report` verb aggregates into a method × source table.

pub mod commands;
pub mod config;
pub mod experiment;

use std::fmt;

/// Errors split by exit code: bad configuration (exit 1) versus failures
/// while running an otherwise valid experiment (exit 2).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Tag a core error as a configuration problem (bad inputs at launch).
pub(crate) fn config_err(e: impl fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// Tag a core error as a runtime failure (mid-run breakage).
pub(crate) fn runtime_err(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}
