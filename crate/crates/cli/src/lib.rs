//! Command-line driver for `hkgdiff`. Every command writes a [`manifest::RunManifest`]
//! into its output directory before doing any work; `hkgdiff replay` re-runs it.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod parallel;

pub use args::{Cli, Command};
pub use error::{CliError, CliResult};

pub fn run(cli: &Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    commands::dispatch(&cli.command, cli.threads)
}
