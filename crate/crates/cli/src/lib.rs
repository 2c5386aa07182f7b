//! Experiment runner: NTK convergence with width, kernel regression against
//! the infinite-width Gaussian limit, convergence along a kernel principal
//! component, and the positive-definiteness report.
//!
//! Each command writes CSV files and a `manifest.json` into its output
//! directory and returns the same numbers in memory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use error::{CliError, Result};
