//! Command-line front end: deterministic experiment runs with bit-stable
//! CSV/JSON artifacts and content-hash manifests.

mod config;
mod jobs;
mod output;
mod scenarios;

use clap::error::ErrorKind;
use clap::Parser;

use config::{Cli, CliError};

/// Every check passed.
const EXIT_OK: i32 = 0;
/// A verification or acceptance check failed; reports were written.
const EXIT_CHECK_FAILED: i32 = 1;
/// The integration blew up; recorded data up to the event was written.
const EXIT_BLOW_UP: i32 = 2;
/// The configuration was rejected; no output files were produced.
const EXIT_CONFIG: i32 = 3;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            std::process::exit(EXIT_OK);
        }
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(EXIT_CONFIG);
        }
    };

    let code = match scenarios::run(cli) {
        Ok(scenarios::RunStatus::Pass) => EXIT_OK,
        Ok(scenarios::RunStatus::CheckFailed) => EXIT_CHECK_FAILED,
        Ok(scenarios::RunStatus::BlowUp) => EXIT_BLOW_UP,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
                CliError::BlowUp(_) => EXIT_BLOW_UP,
            }
        }
    };
    std::process::exit(code);
}
