//! Experiment harness for `gt-core`: the `gt` command-line tool and the
//! experiment drivers it is built on.

pub mod args;
pub mod commands;
pub mod config;
pub mod experiments;
pub mod io;

use std::path::PathBuf;

use gt_core::GtError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] GtError),
    /// Malformed input file contents.
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub(crate) fn input(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub use args::Cli;
pub use commands::run;
