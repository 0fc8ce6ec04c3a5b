// SPDX-License-Identifier: Apache-2.0

//! Experiment driver for the `kdesign` library: configuration and result file
//! formats, report emission and the `generate` / `design` / `evaluate` /
//! `sweep` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod result;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
