//! Command-line driver: config loading, run directories and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod run_dir;

pub use config::RunConfig;
pub use error::CliError;
