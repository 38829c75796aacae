// Copyright 2026 fgrape Contributors
// SPDX-License-Identifier: Apache-2.0

//! `fgrape`: train feedback-control strategies and inspect the results.

mod config;
mod run;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "fgrape", version, about = "Gradient-based feedback control of simulated quantum systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat TOML run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Single worker and zeroed timings, for byte-identical outputs.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a controller and write curve.csv and strategy.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a frozen strategy.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Strategy file written by `train`.
        #[arg(long, value_name = "PATH", conflicts_with = "analytic")]
        strategy: Option<PathBuf>,
        /// Use the analytic purification strategy.
        #[arg(long)]
        analytic: bool,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Extract the decision tree of a frozen strategy.
    ExtractTree {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        strategy: PathBuf,
        #[arg(long)]
        rollouts: Option<usize>,
    },
    /// Compare tape gradients with finite differences and the adjoint route.
    GradCheck {
        #[command(flatten)]
        common: Common,
        /// Check every catalog task.
        #[arg(long)]
        all: bool,
        /// Use the configured size instead of the small instance.
        #[arg(long)]
        full_size: bool,
    },
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { common } => run::train(&common),
        Command::Eval { common, strategy, analytic, rollouts } => run::eval(&common, strategy.as_deref(), analytic, rollouts),
        Command::ExtractTree { common, strategy, rollouts } => run::extract_tree(&common, &strategy, rollouts),
        Command::GradCheck { common, all, full_size } => run::grad_check(&common, all, full_size),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
