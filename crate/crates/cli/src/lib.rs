//! Library half of the `kd` binary: config loading and one function per
//! subcommand, so tests can drive them without spawning processes.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::{RunConfig, OUTPUT_DIR_ENV};
pub use error::{CliError, Result};
