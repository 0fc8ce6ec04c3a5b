// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid gridsize {n}: {reason}")]
    InvalidGridsize { n: usize, reason: &'static str },

    #[error("invalid budget: {0}")]
    InvalidBudget(String),

    #[error("invalid averaging pattern: {0}")]
    InvalidPattern(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("budget projection infeasible: {0}")]
    InfeasibleProjection(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged { epoch: usize, reason: String },

    #[error("unknown method/mode combination: {0}")]
    UnknownCombination(String),

    #[error("dataset header is corrupt: {0}")]
    CorruptHeader(String),

    #[error("unsupported dataset version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated payload: needed {needed} bytes, found {found}")]
    TruncatedPayload { needed: usize, found: usize },

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("malformed manifest at line {line}: {reason}")]
    Manifest { line: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
