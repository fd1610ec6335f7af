//! Command-line pipeline: preprocess, fit, compare, simulate, summarize.

mod commands;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{compare, fit, preprocess, simulate, summarize};
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "mzinb", version, about = "Zero-inflated count regression with crossed random effects")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Standardize covariates and write a correlation/VIF screening report.
    Preprocess(preprocess::PreprocessArgs),
    /// Fit one model and write estimates with Wald statistics.
    Fit(fit::FitArgs),
    /// Rank fitted models by AIC/BIC and test adjacent nested pairs.
    Compare(compare::CompareArgs),
    /// Generate a synthetic dataset from a config.
    Simulate(simulate::SimulateArgs),
    /// Total the response per level of a factor.
    Summarize(summarize::SummarizeArgs),
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, _) => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(error::CliError::Usage("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not configure thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Preprocess(a) => preprocess::run(a),
        Command::Fit(a) => fit::run(a),
        Command::Compare(a) => compare::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Summarize(a) => summarize::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
