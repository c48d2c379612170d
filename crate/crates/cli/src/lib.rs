//! Batch front end for distillation sweeps, Monte Carlo bands and
//! synthetic-camera runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod sweep;

pub use error::{CliError, CliResult};
