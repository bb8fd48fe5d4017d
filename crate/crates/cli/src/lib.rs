//! Subcommand implementations behind the `siftleak` binary.

pub mod args;
mod commands;
pub mod error;
pub mod outputs;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, Result};
