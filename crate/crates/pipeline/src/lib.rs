//! Dataset manifests, synthetic datasets, task configuration and the staged
//! recipe runner behind the `localdom` binary.

pub mod augment;
pub mod backends;
pub mod bank;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod manifest;
pub mod recipe;
pub mod report;
pub mod synth;

pub use error::{PipelineError, Result};
