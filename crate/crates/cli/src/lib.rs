//! Command-line workflow and HTTP slice server.

pub mod args;
pub mod commands;
pub mod config;
pub mod image;
pub mod server;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

pub use args::{Cli, Command};

/// Parses `argv` (including the program name), merging any `--config` file,
/// and runs the selected command.
pub fn run(argv: Vec<OsString>) -> anyhow::Result<ExitCode> {
    let argv = config::merge_config_file(argv)?;
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    commands::dispatch(cli.command)
}
