//! Experiment harness: synthetic data, config-driven runs, sweeps and
//! property checks.

pub mod checks;
pub mod config;
pub mod error;
pub mod generators;
pub mod io;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
