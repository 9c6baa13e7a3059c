//! `ifseg` binary: verb dispatch and exit-code mapping.
//!
//! Exit codes: 0 success, 1 gradient-check failure, 2 configuration error,
//! 3 data or file I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ifseg_cli::commands;
use ifseg_cli::config::ExperimentConfig;
use ifseg_core::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ifseg",
    version,
    about = "Brain-tissue segmentation lab: train, evaluate, sweep, segment, and benchmark UNet-family models over intuitionistic fuzzy image encodings"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` experiment file; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed every random stream derives from.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory artifacts are written into.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sugeno lambda value(s), comma separated.
    #[arg(long)]
    lambda: Option<String>,
    /// unet | attention_unet | ifunet
    #[arg(long)]
    model: Option<String>,
    /// Timed forwards for `bench`.
    #[arg(long)]
    repeats: Option<usize>,
    /// Weights container path; `fresh` lets `bench` time an untrained model.
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Train a model; writes run.csv, weights.ifseg, ledger.txt, and
    /// final-epoch metrics for both partitions.
    Train(CommonArgs),
    /// Evaluate trained weights on the holdout partition; writes metrics.json.
    Eval(CommonArgs),
    /// Train one column per lambda (plus optional plain/attention baselines);
    /// writes sweep.csv.
    Sweep(CommonArgs),
    /// Write per-slice tissue label maps (and optional per-class or
    /// fuzzified-plane dumps) for trained weights.
    Segment(CommonArgs),
    /// Time eval-mode inference on one slice; writes timing.json.
    Bench(CommonArgs),
    /// Finite-difference check of every autodiff op, plus a negative control.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn resolve(args: &CommonArgs) -> Result<ExperimentConfig> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if let Some(lambda) = &args.lambda {
        config.apply("lambda", lambda)?;
    }
    if let Some(model) = &args.model {
        config.apply("model", model)?;
    }
    if let Some(repeats) = args.repeats {
        config.repeats = repeats;
    }
    if let Some(weights) = &args.weights {
        config.weights = Some(weights.clone());
    }
    Ok(config)
}

fn dispatch(verb: &Verb) -> Result<u8> {
    match verb {
        Verb::Train(args) => commands::cmd_train(&resolve(args)?).map(|()| 0),
        Verb::Eval(args) => commands::cmd_eval(&resolve(args)?).map(|()| 0),
        Verb::Sweep(args) => commands::cmd_sweep(&resolve(args)?).map(|()| 0),
        Verb::Segment(args) => commands::cmd_segment(&resolve(args)?).map(|()| 0),
        Verb::Bench(args) => commands::cmd_bench(&resolve(args)?).map(|()| 0),
        Verb::Gradcheck { seed } => commands::cmd_gradcheck(seed.unwrap_or(42)).map(|c| c as u8),
    }
}

fn failure_code(error: &Error) -> u8 {
    match error {
        Error::Io { .. } | Error::CorruptFile { .. } | Error::UnsupportedDatatype(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    match dispatch(&Cli::parse().verb) {
        Ok(code) => ExitCode::from(code),
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(failure_code(&error))
        }
    }
}
