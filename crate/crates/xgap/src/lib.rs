//! Command-line driver for the xgap toolkit: Monte Carlo experiments, bound
//! tables, response-log analysis and mixing-coefficient recovery.
//!
//! The numerical work lives in `xgap_core`; this crate adds log ingestion,
//! experiment presets, parallel execution and file output.

pub mod analyze;
pub mod cli;
pub mod experiment;
pub mod ingest;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Ingest {
        path: PathBuf,
        #[source]
        source: ingest::IngestError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for I/O and runtime failures, 2 for usage, configuration and schema
    /// problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Ingest {
                source: ingest::IngestError::Read(_),
                ..
            } => 1,
            CliError::Ingest { .. } => 2,
            CliError::Io { .. } | CliError::Runtime(_) => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
