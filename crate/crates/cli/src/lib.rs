//! Command implementations behind the `skullcut` binary.

pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod rundir;
pub mod tools;
pub mod train;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
