//! Command-line harness: dataset generation, training, evaluation, the loss,
//! reconstruction-weight and generator ablations, report merging and the
//! built-in oracle self-test.

pub mod commands;
pub mod config;
mod error;
pub mod reference;
pub mod selftest;
pub mod svg;

pub use error::{HarnessError, Result};

/// Version recorded in provenance files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
