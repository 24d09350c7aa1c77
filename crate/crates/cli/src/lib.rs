//! Experiment harness for the `d2gp` crate: configuration, datasets and the
//! `gen-data`, `simulate`, `train`, `reconstruct`, `benchmark` and `analyze`
//! commands.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use experiment::Experiment;
