mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Failure(e.to_string()))?;
    }
    match &cli.command {
        Command::Couple(a) => commands::couple(a),
        Command::Slope(a) => commands::slope(a),
        Command::Map(a) => commands::map(a),
        Command::Threshold(a) => commands::threshold(a),
        Command::Fit(a) => commands::fit(a),
        Command::Thin(a) => commands::thin(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Limit1d(a) => commands::limit1d(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on grammar errors and 0 for --help / --version.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("superrad: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
