mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use caeigen::Error;

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

/// Bad input of any kind is a usage error; everything else is a failed run.
fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Usage(_)
        | Error::Config(_)
        | Error::Parse(_)
        | Error::Dimension(_)
        | Error::NotSymmetric { .. }
        | Error::Io(_) => EXIT_USAGE,
        _ => EXIT_FAILED,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve(a) => commands::cmd_solve(a),
        Command::Bench(a) => commands::cmd_bench(a),
        Command::Tune(a) => commands::cmd_tune(a),
        Command::Verify(a) => commands::cmd_verify(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
