//! `survunc` — simulate survival data, fit base models, attach uncertainty
//! quantifiers, and run the evaluation protocols, all reproducibly from one
//! seed. Exit codes: 0 success, 2 usage error, 1 runtime failure.

mod commands;
mod config;
mod report;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{load_config, usage, CliError, ConfigMap};

#[derive(Parser, Debug)]
#[command(
    name = "survunc",
    version,
    about = "Post-hoc uncertainty quantification for survival models"
)]
struct Cli {
    /// Worker threads (fallback: SURVUNC_THREADS, then hardware count).
    /// Results are identical at every setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config supplying defaults for omitted flags (flags win).
    /// A run.json from a previous run is accepted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a synthetic survival cohort with known ground truth.
    Simulate(commands::SimulateRaw),
    /// Fit a base survival model on the train partition.
    Fit(commands::FitRaw),
    /// Predict survival curves for every row of a dataset.
    Predict(commands::PredictRaw),
    /// Fit an uncertainty quantifier on top of a fitted model.
    UqFit(commands::UqFitRaw),
    /// Score every row of a dataset with a fitted quantifier.
    UqScore(commands::UqScoreRaw),
    /// Run an evaluation protocol on the test partition.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Concordance and integrated Brier score for a model on a partition.
    Metrics(commands::MetricsRaw),
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Discard the most uncertain samples and track metric improvement.
    Selective(commands::EvalSelectiveRaw),
    /// Correlate uncertainty scores with per-sample prediction error.
    Mispredict(commands::EvalMispredictRaw),
    /// Separate in-distribution from shifted samples by uncertainty.
    Ood(commands::EvalOodRaw),
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Simulate(_) => "simulate",
        Command::Fit(_) => "fit",
        Command::Predict(_) => "predict",
        Command::UqFit(_) => "uq-fit",
        Command::UqScore(_) => "uq-score",
        Command::Eval(EvalCommand::Selective(_)) => "eval-selective",
        Command::Eval(EvalCommand::Mispredict(_)) => "eval-mispredict",
        Command::Eval(EvalCommand::Ood(_)) => "eval-ood",
        Command::Metrics(_) => "metrics",
    }
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var("SURVUNC_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| usage(format!("SURVUNC_THREADS must be an integer, got `{v}`"))),
        Err(_) => Ok(0), // 0 = library default (hardware count)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let name = command_name(&cli.command);
    let cfg = match &cli.config {
        Some(path) => load_config(path, name)?,
        None => ConfigMap::default(),
    };
    let threads = resolve_threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    match cli.command {
        Command::Simulate(raw) => commands::cmd_simulate(raw, &cfg),
        Command::Fit(raw) => commands::cmd_fit(raw, &cfg),
        Command::Predict(raw) => commands::cmd_predict(raw, &cfg),
        Command::UqFit(raw) => commands::cmd_uq_fit(raw, &cfg),
        Command::UqScore(raw) => commands::cmd_uq_score(raw, &cfg),
        Command::Eval(EvalCommand::Selective(raw)) => commands::cmd_eval_selective(raw, &cfg),
        Command::Eval(EvalCommand::Mispredict(raw)) => commands::cmd_eval_mispredict(raw, &cfg),
        Command::Eval(EvalCommand::Ood(raw)) => commands::cmd_eval_ood(raw, &cfg),
        Command::Metrics(raw) => commands::cmd_metrics(raw, &cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    };
    std::process::exit(code);
}
