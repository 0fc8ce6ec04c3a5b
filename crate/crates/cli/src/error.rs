// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config line {line}: {reason}")]
    ConfigSyntax { line: usize, reason: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("result file line {line}: {reason}")]
    ResultSyntax { line: usize, reason: String },

    #[error("result was produced from dataset {expected}, but the dataset on disk hashes to {found}")]
    DatasetMismatch { expected: String, found: String },

    #[error("missing design result {}", .0.display())]
    MissingResult(PathBuf),

    #[error("sweep state file is corrupt at line {line}: {reason}")]
    State { line: usize, reason: String },

    #[error("cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: kdesign::Error,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] kdesign::Error),
}

impl CliError {
    /// Short stable identifier used in the machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigSyntax { .. } => "config-syntax",
            CliError::InvalidConfig(_) => "invalid-config",
            CliError::ResultSyntax { .. } => "result-syntax",
            CliError::DatasetMismatch { .. } => "dataset-mismatch",
            CliError::MissingResult(_) => "missing-result",
            CliError::State { .. } => "state",
            CliError::Cell { .. } => "cell",
            CliError::Io { .. } => "io",
            CliError::Core(_) => "core",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
