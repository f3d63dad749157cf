//! The `adcf` command-line tool as a library, so tests and other programs can
//! drive the same code paths as the binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use commands::{cmd_compare, cmd_evaluate, cmd_score, cmd_synth, cmd_train};
pub use config::RunConfig;
pub use error::{CliError, CliResult};

pub fn run(cli: &Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Synth(a) => cmd_synth(&file, a, cli.seed, out).map(drop),
        Command::Train(a) => cmd_train(&file, a, cli.seed, out).map(drop),
        Command::Score(a) => cmd_score(&file, a, out).map(drop),
        Command::Evaluate(a) => cmd_evaluate(&file, a, out).map(drop),
        Command::Compare(a) => cmd_compare(&file, a, out).map(drop),
    }
}

/// Parses `args` (including the program name) and runs the command. Help and
/// version requests print and succeed.
pub fn run_from<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            Ok(())
        }
        Err(e) => Err(CliError::Usage(e.render().to_string())),
    }
}
