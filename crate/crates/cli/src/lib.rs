//! Command-line front end: builds experiments from configuration files, runs
//! them and writes CSV traces.

pub mod commands;
pub mod config;
pub mod experiment;

use std::path::PathBuf;

pub use commands::{cmd_run, cmd_sweep, cmd_validate};
pub use config::ExperimentConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "DISTMETA_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("{0}")]
    Library(#[from] distmeta::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    /// A divergence event, or a final error above the initial one.
    Diverged,
}

/// Exit-code contract: 0 success, 1 configuration or input error, 2 divergence.
pub fn exit_code(result: &Result<Status, CliError>) -> u8 {
    match result {
        Ok(Status::Converged) => 0,
        Ok(Status::Diverged) => 2,
        Err(_) => 1,
    }
}

/// Command-line overrides of configuration values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Value of [`OUT_ENV`], if set.
    pub env_root: Option<PathBuf>,
}
