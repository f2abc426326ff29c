//! Experiment driver: configuration, reduced-model archives, design
//! optimization and held-out evaluation.

pub mod archive;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod seeds;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
