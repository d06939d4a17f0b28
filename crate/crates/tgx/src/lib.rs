//! Experiment pipeline for the tgx temporal graph explainer: configuration,
//! stage orchestration and artifact files.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::Run;
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
