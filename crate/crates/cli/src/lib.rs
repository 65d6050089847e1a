//! Command line, on-disk formats and parallel experiment runner for
//! [`isib_core`].

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;

pub use error::{CliError, Result};
