//! Filesystem-facing companion to `mcout-core`: run configuration,
//! dataset and checkpoint formats, and the train/eval/analyze/ablate
//! drivers behind the `mcout` binary.

pub mod ablate;
pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod runner;
pub mod train;

pub use error::{CliError, CliResult};
