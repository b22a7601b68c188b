//! File formats, experiment driver and command line for `chartrack-core`.

pub mod cli;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod formats;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
