//! Experiment plumbing around [`ben_core`]: TOML run configurations with
//! named presets, the run/oracle/ablate commands, and CSV metrics output.
//!
//! Everything the binary does is callable from here so integration tests
//! can drive full runs in-process. Commands return [`CliError`], which
//! splits configuration mistakes (exit code 1) from runtime failures
//! (exit code 2).

pub mod config;
pub mod csvout;
pub mod oracle;
pub mod runner;

pub use config::{load_file, resolve, Axis, FileConfig, Flags, Preset, Resolved};
pub use oracle::{compute_oracle, OracleTable};
pub use runner::{execute_ablate, execute_run};

/// Failures surfaced to the command line, categorized for the exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
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

impl From<ben_core::Error> for CliError {
    fn from(e: ben_core::Error) -> Self {
        match e {
            ben_core::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
