//! One module per concern: raw clap args, flag/config resolution into a
//! serializable record (echoed into `run.json`), and execution.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use survunc_core::baselines::{
    ensemble_fit, Aggregation, DEFAULT_ENSEMBLE_SIZE, DEFAULT_MC_PASSES,
};
use survunc_core::data::{
    load_csv, split, write_csv, CsvSchema, SurvivalCurve, SurvivalDataset, TimeGrid,
};
use survunc_core::estimators::censoring_kaplan_meier;
use survunc_core::harness::{
    load_quantifier, misprediction_report, ood_report, save_quantifier, selective_prediction,
    Quantifier, UncertaintyScorer, DEFAULT_DISCARD_PCTS, DEFAULT_OOD_BINS,
};
use survunc_core::meta::{build_meta_dataset, fit_meta, sample_anchors, save_anchors};
use survunc_core::metrics::{
    c_td, event_quantile_grid, ibs, DEFAULT_BOOTSTRAP_ITERATIONS, DEFAULT_GRID_POINTS,
};
use survunc_core::models::cox::cox_fit;
use survunc_core::models::deepsurv::{deepsurv_fit, DeepSurvConfig};
use survunc_core::models::rsf::{rsf_fit, RsfConfig};
use survunc_core::models::{load_model, save_model, AnyModel, SurvivalModel};
use survunc_core::synth::{
    default_ood_shift, generate, generate_ood, save_oracle, HazardMixtureSpec, SynthOracle,
    DEFAULT_DIM,
};

use crate::config::{pick, req, runtime, usage, write_run_json, CliError, ConfigMap};
use crate::report::{fmt, fmt_opt, write_json, write_table};

pub const DEFAULT_ANCHOR_COUNT: usize = 50;
const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

// ---------------------------------------------------------------------------
// Shared pieces

#[derive(clap::Args, Debug)]
pub struct SchemaRaw {
    /// Duration column name [default: time].
    #[arg(long)]
    duration_col: Option<String>,
    /// Event indicator column name, 0/1 [default: event].
    #[arg(long)]
    event_col: Option<String>,
    /// Comma-separated categorical feature columns (one-hot encoded).
    #[arg(long, value_delimiter = ',')]
    categorical: Option<Vec<String>>,
}

#[derive(Serialize, Debug, Clone)]
#[serde(rename_all = "kebab-case")]
struct SchemaArgs {
    duration_col: String,
    event_col: String,
    categorical: Vec<String>,
}

impl SchemaRaw {
    fn resolve(self, cfg: &ConfigMap) -> Result<SchemaArgs, CliError> {
        Ok(SchemaArgs {
            duration_col: pick(self.duration_col, cfg, "duration-col")?
                .unwrap_or_else(|| "time".into()),
            event_col: pick(self.event_col, cfg, "event-col")?.unwrap_or_else(|| "event".into()),
            categorical: pick(self.categorical, cfg, "categorical")?.unwrap_or_default(),
        })
    }
}

impl SchemaArgs {
    fn csv_schema(&self) -> CsvSchema {
        CsvSchema {
            duration_col: self.duration_col.clone(),
            event_col: self.event_col.clone(),
            categorical_cols: self.categorical.clone(),
        }
    }
}

fn load_dataset(path: &Path, schema: &SchemaArgs) -> Result<SurvivalDataset, CliError> {
    if !path.exists() {
        return Err(usage(format!("data file `{}` not found", path.display())));
    }
    load_csv(path, &schema.csv_schema()).map_err(usage)
}

fn load_model_file(path: &Path) -> Result<AnyModel, CliError> {
    if !path.exists() {
        return Err(usage(format!("model file `{}` not found", path.display())));
    }
    load_model(path).map_err(usage)
}

fn load_quantifier_file(path: &Path) -> Result<Quantifier, CliError> {
    if !path.exists() {
        return Err(usage(format!(
            "quantifier file `{}` not found",
            path.display()
        )));
    }
    load_quantifier(path).map_err(usage)
}

struct Partitions {
    train: SurvivalDataset,
    val: SurvivalDataset,
    test: SurvivalDataset,
}

/// The fixed 6:2:2 split every command derives from (`data`, `split-seed`),
/// so separately invoked stages agree on the partitions.
fn partition(data: &SurvivalDataset, split_seed: u64) -> Result<Partitions, CliError> {
    let sa = split(data.n(), DEFAULT_SPLIT_RATIOS, split_seed).map_err(usage)?;
    Ok(Partitions {
        train: data.subset(&sa.train),
        val: data.subset(&sa.val),
        test: data.subset(&sa.test),
    })
}

fn pick_partition<'a>(parts: &'a Partitions, all: &'a SurvivalDataset, which: &str) -> &'a SurvivalDataset {
    match which {
        "train" => &parts.train,
        "val" => &parts.val,
        "test" => &parts.test,
        _ => all,
    }
}

fn eval_grid(data: &SurvivalDataset, points: usize) -> Result<TimeGrid, CliError> {
    event_quantile_grid(&data.times(), &data.events(), points).map_err(runtime)
}

fn predict_curves(
    model: &AnyModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<Vec<SurvivalCurve>, CliError> {
    use rayon::prelude::*;
    data.records()
        .par_iter()
        .map(|r| model.predict_survival(&r.covariates, grid))
        .collect::<survunc_core::error::Result<_>>()
        .map_err(runtime)
}

// ---------------------------------------------------------------------------
// simulate

#[derive(clap::Args, Debug)]
pub struct SimulateRaw {
    /// Number of subjects to draw.
    #[arg(long)]
    n: Option<usize>,
    /// Target censoring fraction in [0, 1).
    #[arg(long)]
    censoring: Option<f64>,
    /// Covariate dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Draw a covariate-shifted out-of-distribution cohort (ood.csv) instead
    /// of the in-distribution data.csv.
    #[arg(long)]
    ood: bool,
    /// Shift magnitude applied to the first half of the features (with --ood).
    #[arg(long)]
    shift: Option<f64>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct SimulateArgs {
    n: usize,
    censoring: f64,
    dim: usize,
    seed: u64,
    out: PathBuf,
    ood: bool,
    shift: f64,
}

pub fn cmd_simulate(raw: SimulateRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = SimulateArgs {
        n: req(pick(raw.n, cfg, "n")?, "n")?,
        censoring: pick(raw.censoring, cfg, "censoring")?.unwrap_or(0.0),
        dim: pick(raw.dim, cfg, "dim")?.unwrap_or(DEFAULT_DIM),
        seed: pick(raw.seed, cfg, "seed")?.unwrap_or(0),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
        ood: pick(if raw.ood { Some(true) } else { None }, cfg, "ood")?.unwrap_or(false),
        shift: pick(raw.shift, cfg, "shift")?.unwrap_or(1.0),
    };
    let spec = HazardMixtureSpec::new(args.dim, args.censoring, args.seed).map_err(usage)?;
    write_run_json(&args.out, "simulate", &args, &[])?;
    let (dataset, file_name) = if args.ood {
        let shift_vec: Vec<f64> = default_ood_shift(args.dim)
            .into_iter()
            .map(|s| s * args.shift)
            .collect();
        (
            generate_ood(&spec, args.n, &shift_vec).map_err(runtime)?,
            "ood.csv",
        )
    } else {
        (generate(&spec, args.n).map_err(runtime)?.0, "data.csv")
    };
    write_csv(&dataset, args.out.join(file_name), "time", "event").map_err(runtime)?;
    save_oracle(&SynthOracle { spec }, &args.out.join("oracle.json")).map_err(runtime)?;
    log::info!(
        "wrote {} subjects to {} ({} events)",
        dataset.n(),
        args.out.join(file_name).display(),
        dataset.n_events()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// fit

#[derive(clap::Args, Debug)]
pub struct FitRaw {
    /// Base model kind: cox, rsf, or deepsurv.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    /// Seed for the shared 6:2:2 train/val/test split.
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Newton solver tolerance (cox).
    #[arg(long)]
    tol: Option<f64>,
    /// Newton iteration cap (cox).
    #[arg(long)]
    max_iter: Option<usize>,
    /// Trees in the forest (rsf).
    #[arg(long)]
    trees: Option<usize>,
    /// Minimum samples to split a node (rsf).
    #[arg(long)]
    min_split: Option<usize>,
    /// Minimum samples per leaf (rsf).
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Features tried per split; default ceil(sqrt(d)) (rsf).
    #[arg(long)]
    mtry: Option<usize>,
    /// Split-threshold candidates per feature (rsf).
    #[arg(long)]
    max_thresholds: Option<usize>,
    /// Learning rate (deepsurv).
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated hidden layer widths (deepsurv).
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// Dropout rate (deepsurv).
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Early-stopping patience in epochs (deepsurv).
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct FitArgs {
    model: String,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    seed: u64,
    out: PathBuf,
    tol: f64,
    max_iter: usize,
    trees: usize,
    min_split: usize,
    min_leaf: usize,
    mtry: Option<usize>,
    max_thresholds: usize,
    lr: f64,
    hidden: Vec<usize>,
    dropout: f64,
    epochs: usize,
    batch: usize,
    patience: usize,
}

pub fn cmd_fit(raw: FitRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let deepsurv_defaults = DeepSurvConfig::with_seed(0);
    let args = FitArgs {
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        seed: pick(raw.seed, cfg, "seed")?.unwrap_or(0),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
        tol: pick(raw.tol, cfg, "tol")?.unwrap_or(1e-9),
        max_iter: pick(raw.max_iter, cfg, "max-iter")?.unwrap_or(100),
        trees: pick(raw.trees, cfg, "trees")?.unwrap_or(100),
        min_split: pick(raw.min_split, cfg, "min-split")?.unwrap_or(20),
        min_leaf: pick(raw.min_leaf, cfg, "min-leaf")?.unwrap_or(5),
        mtry: pick(raw.mtry, cfg, "mtry")?,
        max_thresholds: pick(raw.max_thresholds, cfg, "max-thresholds")?.unwrap_or(32),
        lr: pick(raw.lr, cfg, "lr")?.unwrap_or(deepsurv_defaults.lr),
        hidden: pick(raw.hidden, cfg, "hidden")?.unwrap_or(deepsurv_defaults.hidden),
        dropout: pick(raw.dropout, cfg, "dropout")?.unwrap_or(deepsurv_defaults.dropout),
        epochs: pick(raw.epochs, cfg, "epochs")?.unwrap_or(deepsurv_defaults.epochs),
        batch: pick(raw.batch, cfg, "batch")?.unwrap_or(deepsurv_defaults.batch),
        patience: pick(raw.patience, cfg, "patience")?.unwrap_or(deepsurv_defaults.patience),
    };
    if !matches!(args.model.as_str(), "cox" | "rsf" | "deepsurv") {
        return Err(usage(format!(
            "unknown model `{}` (expected `cox`, `rsf`, or `deepsurv`)",
            args.model
        )));
    }
    write_run_json(&args.out, "fit", &args, &[])?;
    let data = load_dataset(&args.data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let model = match args.model.as_str() {
        "cox" => AnyModel::Cox(cox_fit(&parts.train, args.tol, args.max_iter).map_err(runtime)?),
        "rsf" => {
            let config = RsfConfig {
                n_estimators: args.trees,
                min_samples_split: args.min_split,
                min_samples_leaf: args.min_leaf,
                features_per_split: args.mtry,
                max_candidate_thresholds: args.max_thresholds,
                seed: args.seed,
            };
            AnyModel::Rsf(rsf_fit(&parts.train, &config).map_err(runtime)?)
        }
        _ => {
            let config = DeepSurvConfig {
                lr: args.lr,
                hidden: args.hidden.clone(),
                dropout: args.dropout,
                epochs: args.epochs,
                batch: args.batch,
                patience: args.patience,
                seed: args.seed,
            };
            AnyModel::DeepSurv(deepsurv_fit(&parts.train, &parts.val, &config).map_err(runtime)?)
        }
    };
    save_model(&model, args.out.join("model.survmodel.json")).map_err(runtime)?;

    // Fit log: partition sizes plus validation concordance when computable.
    let val_ctd = eval_grid(&parts.val, DEFAULT_GRID_POINTS)
        .and_then(|grid| {
            let curves = predict_curves(&model, &parts.val, &grid)?;
            c_td(&curves, &parts.val.times(), &parts.val.events()).map_err(runtime)
        })
        .map(|m| (Some(m.value), Some(m.n_used)))
        .unwrap_or_else(|e| {
            log::warn!("validation concordance unavailable: {e}");
            (None, None)
        });
    if let Some(v) = val_ctd.0 {
        log::info!("{} fit: validation C^td = {v:.4}", args.model);
    }
    write_json(
        &args.out.join("fitlog.json"),
        &json!({
            "model": args.model,
            "n-train": parts.train.n(),
            "n-val": parts.val.n(),
            "n-test": parts.test.n(),
            "val-c-td": val_ctd.0,
            "val-comparable-pairs": val_ctd.1,
        }),
    )
}

// ---------------------------------------------------------------------------
// predict

#[derive(clap::Args, Debug)]
pub struct PredictRaw {
    /// Fitted model file (model.survmodel.json).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    /// Comma-separated evaluation times; default: the model's native grid.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct PredictArgs {
    model: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    times: Option<Vec<f64>>,
    out: PathBuf,
}

pub fn cmd_predict(raw: PredictRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = PredictArgs {
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        times: pick(raw.times, cfg, "times")?,
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    write_run_json(&args.out, "predict", &args, &[])?;
    let model = load_model_file(&args.model)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let grid = match &args.times {
        Some(ts) => TimeGrid::new(ts.clone()).map_err(usage)?,
        None => model.native_grid().clone(),
    };
    let curves = predict_curves(&model, &data, &grid)?;
    let header = std::iter::once("index".to_string())
        .chain(grid.times().iter().map(|&t| fmt(t)))
        .collect::<Vec<_>>()
        .join(",");
    let rows: Vec<String> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| {
            std::iter::once(i.to_string())
                .chain(c.probabilities().iter().map(|&p| fmt(p)))
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    write_table(&args.out.join("curves.csv"), &header, &rows)
}

// ---------------------------------------------------------------------------
// uq-fit

#[derive(clap::Args, Debug)]
pub struct UqFitRaw {
    /// Quantifier kind: survunc-rf, survunc-mlp, ensemble, or mcdropout.
    #[arg(long)]
    uq: Option<String>,
    /// Fitted base model file.
    #[arg(long)]
    model: Option<PathBuf>,
    /// The training data the base model was fit on.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Anchor count (survunc-*).
    #[arg(long)]
    anchors: Option<usize>,
    /// Ensemble size (ensemble).
    #[arg(long)]
    members: Option<usize>,
    /// Stochastic forward passes (mcdropout).
    #[arg(long)]
    passes: Option<usize>,
    /// Curve-spread aggregation: max-std, mean-std, or mean-euclidean.
    #[arg(long)]
    aggregation: Option<String>,
    /// Grid resolution for baseline curve spreads.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct UqFitArgs {
    uq: String,
    model: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    seed: u64,
    anchors: usize,
    members: usize,
    passes: usize,
    aggregation: String,
    grid_points: usize,
    out: PathBuf,
}

pub fn cmd_uq_fit(raw: UqFitRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = UqFitArgs {
        uq: req(pick(raw.uq, cfg, "uq")?, "uq")?,
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        seed: pick(raw.seed, cfg, "seed")?.unwrap_or(0),
        anchors: pick(raw.anchors, cfg, "anchors")?.unwrap_or(DEFAULT_ANCHOR_COUNT),
        members: pick(raw.members, cfg, "members")?.unwrap_or(DEFAULT_ENSEMBLE_SIZE),
        passes: pick(raw.passes, cfg, "passes")?.unwrap_or(DEFAULT_MC_PASSES),
        aggregation: pick(raw.aggregation, cfg, "aggregation")?.unwrap_or_else(|| "max-std".into()),
        grid_points: pick(raw.grid_points, cfg, "grid-points")?.unwrap_or(DEFAULT_GRID_POINTS),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    let aggregation: Aggregation = args.aggregation.parse().map_err(usage)?;
    if !matches!(
        args.uq.as_str(),
        "survunc-rf" | "survunc-mlp" | "ensemble" | "mcdropout"
    ) {
        return Err(usage(format!(
            "unknown quantifier `{}` (expected `survunc-rf`, `survunc-mlp`, `ensemble`, or `mcdropout`)",
            args.uq
        )));
    }
    let model = load_model_file(&args.model)?;
    if args.uq == "mcdropout" && !matches!(model, AnyModel::DeepSurv(_)) {
        return Err(usage(format!(
            "MC-dropout needs a model with dropout layers; `{}` has none",
            model.kind_name()
        )));
    }
    write_run_json(&args.out, "uq-fit", &args, &[])?;
    let data = load_dataset(&args.data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let quantifier = match args.uq.as_str() {
        kind @ ("survunc-rf" | "survunc-mlp") => {
            let anchors =
                sample_anchors(&parts.train, args.anchors, args.seed, false).map_err(usage)?;
            save_anchors(&anchors, args.out.join("anchors.json")).map_err(runtime)?;
            let meta_ds = build_meta_dataset(&parts.train, &anchors, &model).map_err(runtime)?;
            log::info!(
                "meta-dataset: {} labeled samples ({} excluded)",
                meta_ds.n(),
                meta_ds.excluded_count()
            );
            let meta_kind = kind.trim_start_matches("survunc-").parse().map_err(usage)?;
            Quantifier::Meta {
                meta: fit_meta(&meta_ds, meta_kind, args.seed).map_err(runtime)?,
            }
        }
        "ensemble" => Quantifier::Ensemble {
            ensemble: ensemble_fit(&parts.train, Some(&parts.val), &model, args.members, args.seed)
                .map_err(runtime)?,
            grid: eval_grid(&parts.train, args.grid_points)?,
            aggregation,
        },
        _ => Quantifier::McDropout {
            model,
            passes: args.passes,
            grid: eval_grid(&parts.train, args.grid_points)?,
            aggregation,
            seed: args.seed,
        },
    };
    save_quantifier(&quantifier, &args.out.join("quantifier.metamodel.json")).map_err(runtime)
}

// ---------------------------------------------------------------------------
// uq-score

#[derive(clap::Args, Debug)]
pub struct UqScoreRaw {
    /// Fitted quantifier file (quantifier.metamodel.json).
    #[arg(long)]
    uq: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct UqScoreArgs {
    uq: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    out: PathBuf,
}

pub fn cmd_uq_score(raw: UqScoreRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = UqScoreArgs {
        uq: req(pick(raw.uq, cfg, "uq")?, "uq")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    write_run_json(&args.out, "uq-score", &args, &[])?;
    let quantifier = load_quantifier_file(&args.uq)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let covariates: Vec<Vec<f64>> = data
        .records()
        .iter()
        .map(|r| r.covariates.clone())
        .collect();
    let scores = quantifier.score_batch(&covariates).map_err(runtime)?;
    let rows: Vec<String> = scores
        .iter()
        .enumerate()
        .map(|(i, &s)| format!("{i},{}", fmt(s)))
        .collect();
    write_table(&args.out.join("scores.csv"), "index,score", &rows)
}

// ---------------------------------------------------------------------------
// eval

#[derive(clap::Args, Debug)]
pub struct EvalSelectiveRaw {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    uq: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bootstrap replicates per curve point.
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Comma-separated discard fractions in [0, 1).
    #[arg(long, value_delimiter = ',')]
    pcts: Option<Vec<f64>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct EvalSelectiveArgs {
    model: PathBuf,
    uq: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    seed: u64,
    bootstrap: usize,
    pcts: Vec<f64>,
    out: PathBuf,
}

pub fn cmd_eval_selective(raw: EvalSelectiveRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = EvalSelectiveArgs {
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        uq: req(pick(raw.uq, cfg, "uq")?, "uq")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        seed: pick(raw.seed, cfg, "seed")?.unwrap_or(0),
        bootstrap: pick(raw.bootstrap, cfg, "bootstrap")?.unwrap_or(DEFAULT_BOOTSTRAP_ITERATIONS),
        pcts: pick(raw.pcts, cfg, "pcts")?.unwrap_or_else(|| DEFAULT_DISCARD_PCTS.to_vec()),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    write_run_json(
        &args.out,
        "eval-selective",
        &args,
        &[(
            "bootstrap-order",
            "samples are discarded by uncertainty first; metrics are bootstrapped within the retained subset",
        )],
    )?;
    let model = load_model_file(&args.model)?;
    let quantifier = load_quantifier_file(&args.uq)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let points = selective_prediction(
        &model,
        &quantifier,
        &parts.test,
        &args.pcts,
        args.bootstrap,
        args.seed,
    )
    .map_err(runtime)?;
    let rows: Vec<String> = points
        .iter()
        .map(|p| {
            let c = p.c_td.as_ref();
            let i = p.ibs.as_ref();
            format!(
                "{},{},{},{},{},{},{},{},{}",
                fmt(p.discard_pct),
                p.n_retained,
                fmt_opt(c.map(|s| s.mean)),
                fmt_opt(c.map(|s| s.stddev)),
                c.map(|s| s.skipped.to_string()).unwrap_or_else(|| "NA".into()),
                fmt_opt(i.map(|s| s.mean)),
                fmt_opt(i.map(|s| s.stddev)),
                i.map(|s| s.skipped.to_string()).unwrap_or_else(|| "NA".into()),
                p.flagged
            )
        })
        .collect();
    write_table(
        &args.out.join("selective.csv"),
        "discard_pct,n_retained,ctd_mean,ctd_stddev,ctd_skipped,ibs_mean,ibs_stddev,ibs_skipped,flagged",
        &rows,
    )
}

#[derive(clap::Args, Debug)]
pub struct EvalMispredictRaw {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    uq: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct EvalMispredictArgs {
    model: PathBuf,
    uq: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    out: PathBuf,
}

pub fn cmd_eval_mispredict(raw: EvalMispredictRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = EvalMispredictArgs {
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        uq: req(pick(raw.uq, cfg, "uq")?, "uq")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    write_run_json(&args.out, "eval-mispredict", &args, &[])?;
    let model = load_model_file(&args.model)?;
    let quantifier = load_quantifier_file(&args.uq)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let report = misprediction_report(&model, &quantifier, &parts.test).map_err(runtime)?;
    write_table(
        &args.out.join("mispredict.csv"),
        "rho_ibs,rho_median_diff,n_used",
        &[format!(
            "{},{},{}",
            fmt_opt(report.rho_ibs),
            fmt_opt(report.rho_median_diff),
            report.n_used
        )],
    )?;
    let rows: Vec<String> = report
        .scatter
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.index,
                fmt(r.score),
                fmt(r.per_sample_ibs),
                fmt(r.median_diff),
                r.median_fallback
            )
        })
        .collect();
    write_table(
        &args.out.join("scatter.csv"),
        "index,score,per_sample_ibs,median_diff,median_fallback",
        &rows,
    )
}

#[derive(clap::Args, Debug)]
pub struct EvalOodRaw {
    #[arg(long)]
    uq: Option<PathBuf>,
    /// In-distribution data; its test partition is scored.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Out-of-distribution cohort; scored in full.
    #[arg(long)]
    ood_data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Score-histogram bins.
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct EvalOodArgs {
    uq: PathBuf,
    data: PathBuf,
    ood_data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    bins: usize,
    out: PathBuf,
}

pub fn cmd_eval_ood(raw: EvalOodRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = EvalOodArgs {
        uq: req(pick(raw.uq, cfg, "uq")?, "uq")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        ood_data: req(pick(raw.ood_data, cfg, "ood-data")?, "ood-data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        bins: pick(raw.bins, cfg, "bins")?.unwrap_or(DEFAULT_OOD_BINS),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    write_run_json(&args.out, "eval-ood", &args, &[])?;
    let quantifier = load_quantifier_file(&args.uq)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let ood = load_dataset(&args.ood_data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let report = ood_report(&quantifier, &parts.test, &ood, args.bins).map_err(runtime)?;
    write_table(
        &args.out.join("ood.csv"),
        "auroc,auprc,n_ind,n_ood",
        &[format!(
            "{},{},{},{}",
            fmt(report.auroc.value),
            fmt(report.auprc.value),
            report.ind_scores.len(),
            report.ood_scores.len()
        )],
    )?;
    let h = &report.histograms;
    let rows: Vec<String> = (0..args.bins)
        .map(|b| {
            format!(
                "{},{},{},{}",
                fmt(h.edges[b]),
                fmt(h.edges[b + 1]),
                h.ind_counts[b],
                h.ood_counts[b]
            )
        })
        .collect();
    write_table(
        &args.out.join("hist.csv"),
        "bin_lo,bin_hi,ind_count,ood_count",
        &rows,
    )
}

// ---------------------------------------------------------------------------
// metrics

#[derive(clap::Args, Debug)]
pub struct MetricsRaw {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    schema: SchemaRaw,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Rows to evaluate: train, val, test, or all.
    #[arg(long)]
    partition: Option<String>,
    /// Evaluation-grid resolution (event-time quantiles).
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize, Debug)]
#[serde(rename_all = "kebab-case")]
struct MetricsArgs {
    model: PathBuf,
    data: PathBuf,
    #[serde(flatten)]
    schema: SchemaArgs,
    split_seed: u64,
    partition: String,
    grid_points: usize,
    out: PathBuf,
}

pub fn cmd_metrics(raw: MetricsRaw, cfg: &ConfigMap) -> Result<(), CliError> {
    let args = MetricsArgs {
        model: req(pick(raw.model, cfg, "model")?, "model")?,
        data: req(pick(raw.data, cfg, "data")?, "data")?,
        schema: raw.schema.resolve(cfg)?,
        split_seed: pick(raw.split_seed, cfg, "split-seed")?.unwrap_or(0),
        partition: pick(raw.partition, cfg, "partition")?.unwrap_or_else(|| "test".into()),
        grid_points: pick(raw.grid_points, cfg, "grid-points")?.unwrap_or(DEFAULT_GRID_POINTS),
        out: req(pick(raw.out, cfg, "out")?, "out")?,
    };
    if !matches!(args.partition.as_str(), "train" | "val" | "test" | "all") {
        return Err(usage(format!(
            "unknown partition `{}` (expected `train`, `val`, `test`, or `all`)",
            args.partition
        )));
    }
    write_run_json(&args.out, "metrics", &args, &[])?;
    let model = load_model_file(&args.model)?;
    let data = load_dataset(&args.data, &args.schema)?;
    let parts = partition(&data, args.split_seed)?;
    let subset = pick_partition(&parts, &data, &args.partition);
    let times = subset.times();
    let events = subset.events();
    let grid = eval_grid(subset, args.grid_points)?;
    let censor_curve = censoring_kaplan_meier(&times, &events).map_err(runtime)?;
    let curves = predict_curves(&model, subset, &grid)?;
    let concordance = c_td(&curves, &times, &events).map_err(runtime)?;
    let integrated = ibs(&curves, &times, &events, &grid, &censor_curve).map_err(runtime)?;
    write_json(
        &args.out.join("metrics.json"),
        &json!({
            "partition": args.partition,
            "n": subset.n(),
            "n-events": subset.n_events(),
            "c-td": {"value": concordance.value, "comparable-pairs": concordance.n_used},
            "ibs": {"value": integrated.value, "n-used": integrated.n_used},
        }),
    )
}
