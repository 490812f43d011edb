//! `cpn`: synthetic data, training, inference, evaluation and ensembling
//! driven by one JSON run config.

mod commands;
mod config;

use std::io::ErrorKind;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "cpn", version, about = "Temporal action proposals with proposal-feature masking")]
struct Cli {
    /// JSON run config; missing sections take their defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads (0 = one per core). Use 1 for bitwise-reproducible runs.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset: annotations, features and class scores.
    Synth,
    /// Apply the dataset filters and write the training epoch list.
    Preprocess,
    /// Train a model on the training subset.
    Train,
    /// Run a trained model and write outputs, proposals and detections.
    Infer,
    /// AR@AN and AUC of a proposal file.
    EvalProposals,
    /// Average mAP of a detection file.
    EvalDetections,
    /// Fuse the outputs of several runs.
    Ensemble {
        /// Run directory to fuse; repeatable. Overrides `ensemble.inputs`.
        #[arg(long = "input", value_name = "DIR")]
        inputs: Vec<PathBuf>,
        /// Comma-separated weights, one per input.
        #[arg(long, value_delimiter = ',', value_name = "W")]
        weights: Vec<f64>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out = out.clone();
    }
    if let Command::Ensemble { inputs, weights } = &cli.command {
        if !inputs.is_empty() {
            cfg.ensemble.inputs = inputs.clone();
        }
        if !weights.is_empty() {
            cfg.ensemble.weights = weights.clone();
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Preprocess => commands::preprocess(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Infer => commands::infer(&cfg),
        Command::EvalProposals => commands::eval_proposals(&cfg),
        Command::EvalDetections => commands::eval_detections(&cfg),
        Command::Ensemble { .. } => commands::ensemble(&cfg),
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cpn_core::Error>() {
            return e.kind();
        }
        if cause.is::<serde_json::Error>() {
            return "config";
        }
        if let Some(e) = cause.downcast_ref::<std::io::Error>() {
            return if e.kind() == ErrorKind::NotFound { "not_found" } else { "io" };
        }
    }
    "error"
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CPN_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let line = serde_json::json!({ "error": error_kind(&err), "message": format!("{err:#}") });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
