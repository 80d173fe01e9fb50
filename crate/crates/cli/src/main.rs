//! `prfl`: generate datasets, identify flexible-load parameters, and run
//! the noise-gap and factorization experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "prfl", version, about = "Identify price-responsive flexible loads")]
struct Cli {
    /// TOML run configuration. Defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the data and optimizer seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a truth fleet and prices, and synthesize train/test datasets.
    Gen,
    /// Identify parameters from the train set written by `gen`.
    Identify,
    /// Score identified parameters against a dataset.
    Eval {
        /// Dataset CSV; the test set in the output directory by default.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Noise gap at the true parameters as the number of days grows.
    Theorem1,
    /// Time one Cholesky append against a full refit over a range of sizes.
    BenchChol,
    /// Posterior mean and sd slices of the saved surrogate.
    Slice,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seeds.data = seed;
        cfg.seeds.opt = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.check()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Identify => commands::identify(&cfg),
        Command::Eval { data } => commands::eval(&cfg, data),
        Command::Theorem1 => commands::theorem1(&cfg),
        Command::BenchChol => commands::bench_chol(&cfg),
        Command::Slice => commands::slice(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
