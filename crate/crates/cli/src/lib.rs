//! Command-line harness: configuration, procedural scenarios, dataset and
//! checkpoint persistence, and the train/infer/eval pipeline.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod scenario;

pub use error::{CliError, CliResult};
