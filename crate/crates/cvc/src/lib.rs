//! Experiments, CSV ingestion and the command-line interface around `cvc-core`.

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod report;
pub mod standin;
pub mod stats;

pub use error::{Result, RunError};
