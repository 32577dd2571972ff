//! Experiment driver: PRBS simulation, identification, closed-loop runs,
//! metric tables and plots, all driven by one configuration file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod config;
pub mod pipeline;
pub mod plots;

pub use config::{ExperimentConfig, PlantKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: mampc_core::Error,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    pub(crate) fn numeric(context: impl Into<String>) -> impl FnOnce(mampc_core::Error) -> CliError {
        let context = context.into();
        move |source| {
            if source.is_numeric() {
                CliError::Numeric { context, source }
            } else {
                CliError::Artifact(format!("{context}: {source}"))
            }
        }
    }

    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    /// Process exit code: 1 for configuration and input problems, 2 for
    /// numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numeric { .. } => 2,
            _ => 1,
        }
    }
}
