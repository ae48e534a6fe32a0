//! Command-line harness: config parsing, run orchestration and run-directory outputs.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::{Command, RunConfig};
pub use error::CliError;
pub use run::{execute, Invocation};
