use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tacifa::{commands, RunConfig};

#[derive(Parser)]
#[command(name = "tacifa", version, about = "Time-aligned common and individual factor analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a simulated pair of series
    Simulate(RunArgs),
    /// Fit the model to all columns
    Fit(RunArgs),
    /// Fit with held-out columns and score predictions on them
    Predict(RunArgs),
    /// Fit and report the Syn similarity score
    Similarity(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value`, applied after the file and TACIFA_SEED
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
    overrides: Vec<String>,
}

fn load(args: &RunArgs) -> anyhow::Result<RunConfig> {
    let seed = std::env::var(tacifa::config::SEED_ENV).ok();
    RunConfig::load(args.config.as_deref(), seed.as_deref(), &args.overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => load(a).and_then(|c| commands::simulate(&c).map(drop)),
        Command::Fit(a) => load(a).and_then(|c| commands::fit(&c).map(drop)),
        Command::Predict(a) => load(a).and_then(|c| commands::predict_heldout(&c).map(drop)),
        Command::Similarity(a) => load(a).and_then(|c| commands::similarity(&c).map(drop)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
