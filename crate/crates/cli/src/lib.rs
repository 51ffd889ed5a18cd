//! Experiment runner for `decomp-core`: multi-seed runs, the four-way
//! strategy ablation and the `alpha_prev` sweep, with CSV/JSON outputs that
//! are byte-identical across reruns of the same configuration.

pub mod config;
pub mod experiment;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiment::{cmd_ablation, cmd_run, cmd_sweep, AblationReport, RunReport, SweepReport, Variant};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input dataset.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] decomp_core::Error),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for configuration/usage errors, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}
