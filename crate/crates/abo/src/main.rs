//! `abo` — black-box autotuner over mixed parameter spaces.
//!
//! Subcommands: `search` runs one asynchronous BO search against a synthetic
//! or replay workload; `fit-prior` turns a previous history into a reusable
//! informative prior; `report` computes effectiveness metrics from history
//! CSVs; `simulate` trains a replay workload from a history.
//!
//! Exit codes: 0 on success, 2 when a search completes without a single ok
//! evaluation, 1 for any configuration or input error.

mod commands;

use clap::error::ErrorKind;
use clap::Parser;

use commands::{Cli, ExitCode};

fn main() {
    let env = env_logger::Env::new().filter_or("ABO_LOG", "error");
    env_logger::Builder::from_env(env).format_timestamp(None).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are not errors; everything else is a usage error
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{err}");
                std::process::exit(0);
            }
            eprint!("{err}");
            std::process::exit(1);
        }
    };

    match commands::run(cli) {
        Ok(ExitCode::Success) => std::process::exit(0),
        Ok(ExitCode::NoOkEvaluations) => std::process::exit(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
