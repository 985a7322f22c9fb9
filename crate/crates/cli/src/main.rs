//! `areltrend`: fit and compare trend models on areal count panels.

mod args;
mod commands;
mod error;
mod inputs;
mod output;

use clap::Parser;

use args::{Cli, Command};
use error::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::BuildCovariates(a) => commands::build_covariates_cmd(a),
        Command::Contiguity(a) => commands::contiguity_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Fit(a) => commands::fit_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Summarize(a) => commands::summarize_cmd(a),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARELTREND_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
