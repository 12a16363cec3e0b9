//! `gmt`: generate clouds, build cubes and run the analyses of `gmt-core`.
//!
//! Exit codes: 0 pass, 2 verdict failure, 3 input error, 4 numeric failure.

mod config;
mod stages;

use std::process::ExitCode;

use clap::Parser;

use config::Cli;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match stages::dispatch(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("gmt: {e}");
            ExitCode::from(stages::error_code(&e))
        }
    }
}
