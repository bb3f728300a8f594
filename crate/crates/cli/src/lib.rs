//! Operational shell around the `tsda` core: subject records, TOML configs,
//! model files, experiment runs and report files.

pub mod artifact;
pub mod config;
pub mod error;
pub mod experiment;
pub mod fsio;
pub mod record;
pub mod report;

pub use error::{CliError, Result};
