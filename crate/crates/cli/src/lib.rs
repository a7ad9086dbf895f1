//! Experiment harness: configuration, the `train`, `eval`, `sweep-m`,
//! `export-weight-maps` and `inspect-config` commands, and their report
//! files.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::Context;
pub use config::{ExperimentConfig, LoadedConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] apac_core::Error),
    #[error("{}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 config, 3 data, 4 numeric abort, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(apac_core::Error::NonFiniteLoss { .. }) => 4,
            CliError::Core(e) if e.is_data_error() => 3,
            _ => 1,
        }
    }
}
