use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

mod args;
mod commands;

use args::{Cli, Command};

/// Usage and configuration problems.
const EXIT_USAGE: u8 = 1;
/// Unreadable, malformed or insufficient data.
const EXIT_DATA: u8 = 2;
/// A run or check that started and then failed.
const EXIT_RUN: u8 = 3;

pub enum Failure {
    Usage(String),
    Data(String),
    Run(String),
}

impl From<layerlab::Error> for Failure {
    fn from(e: layerlab::Error) -> Self {
        use layerlab::Error as E;
        match e {
            e if e.is_data_error() => Failure::Data(e.to_string()),
            e @ (E::Config(_) | E::Validation { .. }) => Failure::Usage(e.to_string()),
            e => Failure::Run(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let out = match cli.command {
        Command::DatasetBuild(a) => commands::dataset_build(a),
        Command::Grid(a) => commands::grid(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
        Command::Align(a) => commands::align(a),
        Command::Selfcheck(a) => commands::selfcheck(a),
        Command::Stats(a) => commands::stats(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Data(m) => (EXIT_DATA, m),
                Failure::Run(m) => (EXIT_RUN, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
