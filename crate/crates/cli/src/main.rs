//! `inverse-mcmc`: toy example, GBM path sampling, model probing, replay.
//!
//! Exit codes: 0 success, 1 criteria failed or run failed, 2 usage, 3 I/O.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod failure;
mod gbm;
mod manifest;
mod probe;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::failure::{Failure, Status};

#[derive(Parser, Debug)]
#[command(
    name = "inverse-mcmc",
    version,
    about = "Sample model inputs so that outputs follow a prescribed density"
)]
struct Cli {
    /// Worker threads for chains and probe shards (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Three-state toy chain: naive versus probed acceptance rule.
    Toy(toy::ToyArgs),
    /// Geometric Brownian motion paths from Gaussian innovations.
    Gbm(gbm::GbmArgs),
    /// Evaluate a model on uniform inputs from a box.
    Probe(probe::ProbeArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(clap::Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn dispatch(command: Command) -> Result<Status, Failure> {
    match command {
        Command::Toy(args) => toy::run(&args),
        Command::Gbm(args) => gbm::run(&args),
        Command::Probe(args) => probe::run(&args),
        Command::Replay(args) => {
            let argv = manifest::replay_argv(&args.manifest, args.out.as_deref())?;
            let cli = Cli::try_parse_from(&argv)
                .map_err(|e| Failure::Usage(format!("manifest does not parse: {e}")))?;
            match cli.command {
                Command::Replay(_) => {
                    Err(Failure::Usage("a manifest cannot replay a replay".into()))
                }
                command => dispatch(command),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::CriteriaFailed) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
