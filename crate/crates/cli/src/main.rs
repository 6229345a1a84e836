//! `egean`: simulate worlds, train and evaluate models, and benchmark the
//! loss estimators. Every command writes into
//! `<output root>/<command>-<config hash>/`.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    /// I/O or configuration problem.
    pub fn io(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    /// Refused because the request is too large for the chosen mode.
    pub fn too_large(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    /// Training hit a non-finite loss.
    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: 4, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "egean", version, about = "Counterfactual CVR estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=3`. Repeatable;
    /// applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a ground-truth sidecar.
    Simulate(Common),
    /// Exposure pretraining only; writes a checkpoint.
    Pretrain(Trainish),
    /// Pretraining (unless `data.checkpoint` is set) and multi-task finetuning.
    Train(Trainish),
    /// AUCs of a checkpoint on a dataset.
    Evaluate(Common),
    /// Bias and variance of the estimators over a λ grid.
    BenchEstimators(Common),
    /// Shared and CVR-personalised embeddings per sample.
    ExportEmbeddings(Common),
}

#[derive(clap::Args)]
struct Trainish {
    #[command(flatten)]
    common: Common,
    /// Disable one component: without-EN, without-TPN or without-ML.
    #[arg(long)]
    ablate: Option<String>,
}

fn run(cli: Cli) -> Result<PathBuf, Failure> {
    let (common, ablate) = match &cli.command {
        Command::Pretrain(t) | Command::Train(t) => (&t.common, t.ablate.as_deref()),
        Command::Simulate(c) | Command::Evaluate(c) | Command::BenchEstimators(c) | Command::ExportEmbeddings(c) => (c, None),
    };
    let cfg = config::resolve(common.config.as_deref(), &common.overrides, ablate)?;
    match cli.command {
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Pretrain(_) => commands::pretrain(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Evaluate(_) => commands::evaluate_cmd(&cfg),
        Command::BenchEstimators(_) => commands::bench(&cfg),
        Command::ExportEmbeddings(_) => commands::export(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
