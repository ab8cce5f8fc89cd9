//! Harness around the model stack: dataset ingestion, training, gradient
//! checking, checkpoint persistence, cost reports and attention export.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod run_config;
pub mod schedule;
pub mod trainer;

pub use error::{CliError, Result};
