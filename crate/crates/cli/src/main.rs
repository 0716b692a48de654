//! `shoalguide` command-line entry point.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
//! missing or invalid config). The resolved config digest goes to stderr on
//! every run; result values go to stdout.

mod args;
mod commands;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// Marks an error as the caller's fault, exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
