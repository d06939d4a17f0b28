use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tgx::{commands, CliResult, Run};

#[derive(Parser)]
#[command(name = "tgx", version, about = "Explain temporal graph classifiers with Koopman modes and sparse dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory holding all artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the labelled dataset.
    Generate(Common),
    /// Train the classifier and dump embeddings.
    Train(Common),
    /// Fit DMD and SINDy explanations on the held-out graphs.
    Explain(Common),
    /// Score the explanations against the ground truth.
    Evaluate(Common),
    /// Write plot data and a summary table.
    Report(Common),
    /// Search the candidate lists of the `grid` section.
    Grid(Common),
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, stage): (&Common, fn(&Run) -> CliResult<()>) = match &cli.command {
        Command::Generate(c) => (c, commands::generate),
        Command::Train(c) => (c, |r| commands::train(r).map(drop)),
        Command::Explain(c) => (c, |r| commands::explain(r).map(drop)),
        Command::Evaluate(c) => (c, |r| commands::evaluate(r).map(drop)),
        Command::Report(c) => (c, commands::report),
        Command::Grid(c) => (c, |r| commands::grid(r).map(drop)),
    };
    let run = Run::load(&common.config, common.seed, &common.out)?;
    stage(&run)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
