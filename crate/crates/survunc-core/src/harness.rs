//! The three evaluation protocols — selective prediction, misprediction
//! detection, and out-of-distribution detection — plus the [`Quantifier`]
//! wrapper that gives every uncertainty method one scoring interface.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{ensemble_score, mc_dropout_score, Aggregation, EnsembleUq};
use crate::data::{SurvivalCurve, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::estimators::censoring_kaplan_meier;
use crate::meta::{self, MetaModel};
use crate::metrics::{
    bootstrap, event_quantile_grid, median_survival_diff, pearson, per_sample_ibs,
    BootstrapSummary, MetricValue, DEFAULT_GRID_POINTS,
};
use crate::models::{load_envelope, save_envelope, AnyModel, SurvivalModel};
use crate::seed;

/// Discard fractions evaluated when none are requested.
pub const DEFAULT_DISCARD_PCTS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
/// Histogram bins in the OOD report.
pub const DEFAULT_OOD_BINS: usize = 30;

const QUANTIFIER_FORMAT: &str = "survunc-quantifier";
const QUANTIFIER_VERSION: u32 = 1;

/// Anything that maps a covariate vector to an uncertainty score
/// (higher = more uncertain).
pub trait UncertaintyScorer: Sync {
    fn score_one(&self, x: &[f64]) -> Result<f64>;

    fn score_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.score_one(x)).collect()
    }
}

impl<F> UncertaintyScorer for F
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    fn score_one(&self, x: &[f64]) -> Result<f64> {
        self(x)
    }
}

/// A fitted, serializable uncertainty quantifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Quantifier {
    /// Anchor-trained meta-model scoring from covariates alone.
    Meta { meta: MetaModel },
    /// Spread of the member survival curves on a fixed grid.
    Ensemble {
        ensemble: EnsembleUq,
        grid: TimeGrid,
        aggregation: Aggregation,
    },
    /// Spread of stochastic dropout passes of one hazard network.
    McDropout {
        model: AnyModel,
        passes: usize,
        grid: TimeGrid,
        aggregation: Aggregation,
        seed: u64,
    },
}

impl Quantifier {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Quantifier::Meta { meta } => match meta.kind() {
                meta::MetaModelKind::Rf => "survunc-rf",
                meta::MetaModelKind::Mlp => "survunc-mlp",
            },
            Quantifier::Ensemble { .. } => "ensemble",
            Quantifier::McDropout { .. } => "mcdropout",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Quantifier::Meta { meta } => meta.dim(),
            Quantifier::Ensemble { ensemble, .. } => ensemble.dim(),
            Quantifier::McDropout { model, .. } => model.dim(),
        }
    }
}

impl UncertaintyScorer for Quantifier {
    fn score_one(&self, x: &[f64]) -> Result<f64> {
        match self {
            Quantifier::Meta { meta } => meta::score(meta, x),
            Quantifier::Ensemble {
                ensemble,
                grid,
                aggregation,
            } => ensemble_score(ensemble, x, grid, *aggregation),
            Quantifier::McDropout {
                model,
                passes,
                grid,
                aggregation,
                seed,
            } => mc_dropout_score(model, x, grid, *passes, *seed, *aggregation),
        }
    }
}

pub fn save_quantifier(q: &Quantifier, path: &std::path::Path) -> Result<()> {
    let value = serde_json::to_value(q)?;
    save_envelope(QUANTIFIER_FORMAT, QUANTIFIER_VERSION, value, path)
}

pub fn load_quantifier(path: &std::path::Path) -> Result<Quantifier> {
    let value = load_envelope(QUANTIFIER_FORMAT, QUANTIFIER_VERSION, path)?;
    Ok(serde_json::from_value(value)?)
}

/// One row of the selective-prediction curve. `c_td`/`ibs` are `None` — and
/// the point `flagged` — when too few samples were retained for the metric.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveCurvePoint {
    pub discard_pct: f64,
    pub n_retained: usize,
    pub c_td: Option<BootstrapSummary>,
    pub ibs: Option<BootstrapSummary>,
    pub flagged: bool,
}

/// Per-sample pieces the bootstrap re-aggregates without re-predicting:
/// event times, the concordance evaluation matrix `svals[i][j] = S(t_i|x_j)`,
/// and Brier summands with their usability masks on the grid.
struct RetainedPieces {
    times: Vec<f64>,
    svals: Vec<Vec<f64>>,
    summands: Vec<Vec<f64>>,
    usable: Vec<Vec<bool>>,
    grid_times: Vec<f64>,
}

impl RetainedPieces {
    /// All samples here are uncensored by protocol.
    fn build(
        times: &[f64],
        curves: &[SurvivalCurve],
        grid: &TimeGrid,
        censor_curve: &SurvivalCurve,
    ) -> Self {
        let k = times.len();
        let svals: Vec<Vec<f64>> = (0..k)
            .into_par_iter()
            .map(|i| curves.iter().map(|c| c.eval(times[i])).collect())
            .collect();
        let pts = grid.times();
        let mut summands = vec![vec![0.0; pts.len()]; k];
        let mut usable = vec![vec![true; pts.len()]; k];
        for i in 0..k {
            let g_left = censor_curve.eval_left(times[i]);
            for (g, &t) in pts.iter().enumerate() {
                let s = curves[i].eval(t);
                if t >= times[i] {
                    if g_left == 0.0 {
                        usable[i][g] = false;
                    } else {
                        summands[i][g] = s * s / g_left;
                    }
                } else {
                    let g_t = censor_curve.eval(t);
                    if g_t == 0.0 {
                        usable[i][g] = false;
                    } else {
                        summands[i][g] = (1.0 - s) * (1.0 - s) / g_t;
                    }
                }
            }
        }
        RetainedPieces {
            times: times.to_vec(),
            svals,
            summands,
            usable,
            grid_times: pts.to_vec(),
        }
    }

    /// Concordance over the resampled index multiset (all uncensored).
    fn c_td_of(&self, idx: &[usize]) -> Result<f64> {
        let mut num = 0u64;
        let mut den = 0u64;
        for &a in idx {
            for &b in idx {
                if self.times[a] < self.times[b] {
                    den += 1;
                    if self.svals[a][a] < self.svals[a][b] {
                        num += 1;
                    }
                }
            }
        }
        if den == 0 {
            return Err(SurvError::Undefined(
                "no comparable pairs in this resample".into(),
            ));
        }
        Ok(num as f64 / den as f64)
    }

    /// Integrated Brier score over the resampled index multiset; reproduces
    /// the aggregate metric's zero-weight drop rule per grid time.
    fn ibs_of(&self, idx: &[usize]) -> Result<f64> {
        let pts = &self.grid_times;
        let mut bs = vec![0.0; pts.len()];
        for (g, slot) in bs.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut count = 0usize;
            for &i in idx {
                if self.usable[i][g] {
                    acc += self.summands[i][g];
                    count += 1;
                }
            }
            if count == 0 {
                return Err(SurvError::Undefined(
                    "every resampled subject had a zero censoring weight".into(),
                ));
            }
            *slot = acc / count as f64;
        }
        let mut integral = 0.0;
        for g in 0..pts.len() - 1 {
            integral += 0.5 * (bs[g] + bs[g + 1]) * (pts[g + 1] - pts[g]);
        }
        Ok(integral / (pts[pts.len() - 1] - pts[0]))
    }
}

/// Rank the uncensored test samples by uncertainty, discard the top fraction
/// at each requested percentage, and re-estimate C^td and IBS (with `b`
/// bootstrap replicates) on the retained uncensored samples. Ranking ties
/// break by stable input order; the evaluation grid and the censoring curve
/// come from the full test set and stay fixed across percentages.
pub fn selective_prediction(
    model: &AnyModel,
    scorer: &impl UncertaintyScorer,
    test: &SurvivalDataset,
    discard_pcts: &[f64],
    b: usize,
    seed_value: u64,
) -> Result<Vec<SelectiveCurvePoint>> {
    for &p in discard_pcts {
        if !(0.0..1.0).contains(&p) {
            return Err(SurvError::InvalidArgument(format!(
                "discard fraction {p} must lie in [0, 1)"
            )));
        }
    }
    let unc = test.event_indices();
    let m = unc.len();
    if m < 2 {
        return Err(SurvError::InvalidArgument(
            "selective prediction needs at least 2 uncensored test samples".into(),
        ));
    }
    let all_times = test.times();
    let all_events = test.events();
    let grid = event_quantile_grid(&all_times, &all_events, DEFAULT_GRID_POINTS)?;
    let censor_curve = censoring_kaplan_meier(&all_times, &all_events)?;

    let xs: Vec<Vec<f64>> = unc
        .iter()
        .map(|&i| test.record(i).covariates.clone())
        .collect();
    let scores = scorer.score_batch(&xs)?;
    let times: Vec<f64> = unc.iter().map(|&i| all_times[i]).collect();
    let curves: Vec<SurvivalCurve> = xs
        .par_iter()
        .map(|x| model.predict_survival(x, &grid))
        .collect::<Result<_>>()?;

    // Most-uncertain-first ranking; stable sort keeps input order on ties.
    let mut ranking: Vec<usize> = (0..m).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let pieces = RetainedPieces::build(&times, &curves, &grid, &censor_curve);

    let mut points = Vec::with_capacity(discard_pcts.len());
    for &p in discard_pcts {
        let k_drop = (p * m as f64).floor() as usize;
        let mut dropped = vec![false; m];
        for &r in &ranking[..k_drop] {
            dropped[r] = true;
        }
        let retained: Vec<usize> = (0..m).filter(|&i| !dropped[i]).collect();
        let n_retained = retained.len();
        let point_seed = seed::derive(seed_value, "selective", (p * 10_000.0).round() as u64);
        let run =
            |f: &(dyn Fn(&[usize]) -> Result<f64> + Sync)| -> Option<BootstrapSummary> {
                let remapped = |idx: &[usize]| -> Result<f64> {
                    let real: Vec<usize> = idx.iter().map(|&i| retained[i]).collect();
                    f(&real)
                };
                match bootstrap(remapped, n_retained, b, point_seed) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        log::warn!("discard {p}: metric unavailable ({e})");
                        None
                    }
                }
            };
        let (ctd_summary, ibs_summary) = if n_retained < 2 {
            log::warn!("discard {p}: only {n_retained} samples retained");
            (None, None)
        } else {
            (
                run(&|idx: &[usize]| pieces.c_td_of(idx)),
                run(&|idx: &[usize]| pieces.ibs_of(idx)),
            )
        };
        let flagged = ctd_summary.is_none() || ibs_summary.is_none();
        points.push(SelectiveCurvePoint {
            discard_pct: p,
            n_retained,
            c_td: ctd_summary,
            ibs: ibs_summary,
            flagged,
        });
    }
    Ok(points)
}

/// One uncensored test sample in the misprediction scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    /// Index into the test dataset.
    pub index: usize,
    pub score: f64,
    pub per_sample_ibs: f64,
    pub median_diff: f64,
    /// The predicted curve never crossed 0.5; the last grid time stood in.
    pub median_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MispredictionReport {
    /// Pearson correlation between scores and per-sample integrated Brier
    /// scores; `None` (with a logged diagnostic) when scores are constant.
    pub rho_ibs: Option<f64>,
    /// Same against |predicted median survival − event time|.
    pub rho_median_diff: Option<f64>,
    pub scatter: Vec<ScatterRow>,
    pub n_used: usize,
}

fn pearson_or_diagnostic(label: &str, a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    match pearson(a, b) {
        Ok(r) => Ok(Some(r)),
        Err(SurvError::Undefined(msg)) => {
            log::warn!("{label}: correlation undefined ({msg})");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Correlate uncertainty scores with two per-sample error measures over the
/// uncensored test samples, and emit the raw pairs for external plotting.
pub fn misprediction_report(
    model: &AnyModel,
    scorer: &impl UncertaintyScorer,
    test: &SurvivalDataset,
) -> Result<MispredictionReport> {
    let unc = test.event_indices();
    if unc.len() < 2 {
        return Err(SurvError::InvalidArgument(
            "misprediction analysis needs at least 2 uncensored test samples".into(),
        ));
    }
    let all_times = test.times();
    let all_events = test.events();
    let grid = event_quantile_grid(&all_times, &all_events, DEFAULT_GRID_POINTS)?;
    let censor_curve = censoring_kaplan_meier(&all_times, &all_events)?;

    let xs: Vec<Vec<f64>> = unc
        .iter()
        .map(|&i| test.record(i).covariates.clone())
        .collect();
    let scores = scorer.score_batch(&xs)?;
    let scatter: Vec<ScatterRow> = unc
        .par_iter()
        .zip(&xs)
        .zip(&scores)
        .map(|((&i, x), &score)| {
            let curve = model.predict_survival(x, &grid)?;
            let t_i = all_times[i];
            let psibs = per_sample_ibs(&curve, t_i, true, &grid, &censor_curve)?;
            let med = median_survival_diff(&curve, t_i);
            Ok(ScatterRow {
                index: i,
                score,
                per_sample_ibs: psibs,
                median_diff: med.value,
                median_fallback: med.fallback,
            })
        })
        .collect::<Result<_>>()?;

    let ibs_vec: Vec<f64> = scatter.iter().map(|r| r.per_sample_ibs).collect();
    let med_vec: Vec<f64> = scatter.iter().map(|r| r.median_diff).collect();
    let rho_ibs = pearson_or_diagnostic("score vs per-sample IBS", &scores, &ibs_vec)?;
    let rho_median_diff =
        pearson_or_diagnostic("score vs median-survival gap", &scores, &med_vec)?;
    Ok(MispredictionReport {
        rho_ibs,
        rho_median_diff,
        n_used: scatter.len(),
        scatter,
    })
}

/// Shared-range score histograms for the two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodHistograms {
    /// `bins + 1` edges spanning the pooled score range.
    pub edges: Vec<f64>,
    pub ind_counts: Vec<usize>,
    pub ood_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OodReport {
    pub auroc: MetricValue,
    pub auprc: MetricValue,
    pub histograms: OodHistograms,
    pub ind_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

/// Score both groups with the quantifier (covariates only; in-distribution
/// samples are the negative class) and summarize separability.
pub fn ood_report(
    scorer: &impl UncertaintyScorer,
    ind_test: &SurvivalDataset,
    ood_data: &SurvivalDataset,
    bins: usize,
) -> Result<OodReport> {
    if ind_test.d() != ood_data.d() {
        return Err(SurvError::DimensionMismatch {
            expected: ind_test.d(),
            got: ood_data.d(),
        });
    }
    if bins == 0 {
        return Err(SurvError::InvalidArgument(
            "histogram needs at least 1 bin".into(),
        ));
    }
    let covs = |d: &SurvivalDataset| -> Vec<Vec<f64>> {
        d.records().iter().map(|r| r.covariates.clone()).collect()
    };
    let ind_scores = scorer.score_batch(&covs(ind_test))?;
    let ood_scores = scorer.score_batch(&covs(ood_data))?;
    let auroc = crate::metrics::auroc(&ind_scores, &ood_scores)?;
    let auprc = crate::metrics::auprc(&ind_scores, &ood_scores)?;

    let all = ind_scores.iter().chain(&ood_scores);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &s in all {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    if lo == hi {
        lo -= 0.5;
        hi += 0.5;
    }
    let edges: Vec<f64> = (0..=bins)
        .map(|k| lo + (hi - lo) * k as f64 / bins as f64)
        .collect();
    let width = (hi - lo) / bins as f64;
    let count = |scores: &[f64]| -> Vec<usize> {
        let mut counts = vec![0usize; bins];
        for &s in scores {
            let b = (((s - lo) / width).floor() as usize).min(bins - 1);
            counts[b] += 1;
        }
        counts
    };
    Ok(OodReport {
        auroc,
        auprc,
        histograms: OodHistograms {
            edges,
            ind_counts: count(&ind_scores),
            ood_counts: count(&ood_scores),
        },
        ind_scores,
        ood_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::ensemble_fit;
    use crate::meta::{build_meta_dataset, fit_meta, sample_anchors, MetaModelKind};
    use crate::metrics::{c_td, ibs};
    use crate::models::cox::cox_fit;
    use crate::synth::{generate, generate_ood, HazardMixtureSpec};

    fn small_world(seed_value: u64) -> (AnyModel, SurvivalDataset, SurvivalDataset) {
        let spec = HazardMixtureSpec::new(4, 0.25, seed_value).unwrap();
        let (data, _) = generate(&spec, 900).unwrap();
        let train = data.subset(&(0..600).collect::<Vec<_>>());
        let test = data.subset(&(600..900).collect::<Vec<_>>());
        let model = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        (model, train, test)
    }

    fn meta_quantifier(model: &AnyModel, train: &SurvivalDataset, seed_value: u64) -> Quantifier {
        let anchors = sample_anchors(train, 50, seed_value, false).unwrap();
        let ds = build_meta_dataset(train, &anchors, model).unwrap();
        let meta = fit_meta(&ds, MetaModelKind::Rf, seed_value).unwrap();
        Quantifier::Meta { meta }
    }

    #[test]
    fn zero_discard_reproduces_full_test_metrics() {
        let (model, _, test) = small_world(71);
        let scorer = |_: &[f64]| Ok(0.0);
        let points =
            selective_prediction(&model, &scorer, &test, &[0.0], 50, 7).unwrap();
        assert_eq!(points.len(), 1);
        let p0 = &points[0];
        assert_eq!(p0.n_retained, test.n_events());
        assert!(!p0.flagged);

        // Direct full-set metrics over the same retained (uncensored) set.
        let unc = test.event_indices();
        let times = test.times();
        let events = test.events();
        let grid = event_quantile_grid(&times, &events, 64).unwrap();
        let censor = censoring_kaplan_meier(&times, &events).unwrap();
        let curves: Vec<SurvivalCurve> = unc
            .iter()
            .map(|&i| model.predict_survival(&test.record(i).covariates, &grid).unwrap())
            .collect();
        let sub_times: Vec<f64> = unc.iter().map(|&i| times[i]).collect();
        let sub_events = vec![true; unc.len()];
        let direct_ctd = c_td(&curves, &sub_times, &sub_events).unwrap().value;
        let direct_ibs = ibs(&curves, &sub_times, &sub_events, &grid, &censor)
            .unwrap()
            .value;
        let got_ctd = p0.c_td.as_ref().unwrap();
        let got_ibs = p0.ibs.as_ref().unwrap();
        assert!(
            (got_ctd.mean - direct_ctd).abs() < 3.0 * got_ctd.stddev.max(1e-3),
            "bootstrap mean {} vs direct {direct_ctd}",
            got_ctd.mean
        );
        assert!(
            (got_ibs.mean - direct_ibs).abs() < 3.0 * got_ibs.stddev.max(1e-3),
            "bootstrap mean {} vs direct {direct_ibs}",
            got_ibs.mean
        );
    }

    #[test]
    fn oracle_error_scorer_makes_ibs_non_increasing() {
        let (model, _, test) = small_world(73);
        // Score each sample by its own realized error: the per-sample
        // integrated Brier score of the model's prediction.
        let times = test.times();
        let events = test.events();
        let grid = event_quantile_grid(&times, &events, 64).unwrap();
        let censor = censoring_kaplan_meier(&times, &events).unwrap();
        let lookup: std::collections::HashMap<u64, f64> = test
            .event_indices()
            .iter()
            .map(|&i| {
                let x = &test.record(i).covariates;
                let curve = model.predict_survival(x, &grid).unwrap();
                let v = per_sample_ibs(&curve, times[i], true, &grid, &censor).unwrap();
                (x.iter().map(|f| f.to_bits()).fold(0u64, |a, b| a ^ b.rotate_left(17)), v)
            })
            .collect();
        let scorer = move |x: &[f64]| -> Result<f64> {
            let key = x.iter().map(|f| f.to_bits()).fold(0u64, |a, b| a ^ b.rotate_left(17));
            Ok(*lookup.get(&key).expect("scored sample seen before"))
        };
        let points = selective_prediction(
            &model,
            &scorer,
            &test,
            &[0.0, 0.25, 0.5],
            50,
            11,
        )
        .unwrap();
        let ibs_means: Vec<f64> = points
            .iter()
            .map(|p| p.ibs.as_ref().unwrap().mean)
            .collect();
        assert!(
            ibs_means[1] <= ibs_means[0] + 1e-9 && ibs_means[2] <= ibs_means[1] + 1e-9,
            "IBS should not increase when discarding worst-first: {ibs_means:?}"
        );
        let retained: Vec<usize> = points.iter().map(|p| p.n_retained).collect();
        assert!(retained[0] > retained[1] && retained[1] > retained[2]);
    }

    #[test]
    fn discard_fraction_validation_and_flagging() {
        let (model, _, test) = small_world(79);
        let scorer = |_: &[f64]| Ok(1.0);
        assert!(selective_prediction(&model, &scorer, &test, &[1.0], 10, 1).is_err());
        assert!(selective_prediction(&model, &scorer, &test, &[-0.1], 10, 1).is_err());
        // Discarding all but one sample leaves nothing comparable → flagged.
        let m = test.n_events() as f64;
        let p = (m - 1.0) / m;
        let points = selective_prediction(&model, &scorer, &test, &[p], 10, 1).unwrap();
        assert!(points[0].flagged);
        assert!(points[0].c_td.is_none());
    }

    #[test]
    fn constant_scores_leave_metrics_statistically_unchanged() {
        let (model, _, test) = small_world(83);
        let scorer = |_: &[f64]| Ok(0.42);
        let points = selective_prediction(
            &model,
            &scorer,
            &test,
            &DEFAULT_DISCARD_PCTS,
            100,
            13,
        )
        .unwrap();
        let base = points[0].c_td.as_ref().unwrap();
        for p in &points[1..] {
            let here = p.c_td.as_ref().unwrap();
            let pooled = (base.stddev.powi(2) + here.stddev.powi(2)).sqrt();
            assert!(
                (here.mean - base.mean).abs() <= 2.0 * pooled,
                "discard {}: {} vs base {} (pooled sd {pooled})",
                p.discard_pct,
                here.mean,
                base.mean
            );
        }
    }

    #[test]
    fn oracle_misprediction_scores_correlate_perfectly() {
        let (model, _, test) = small_world(89);
        // First pass with a constant scorer gathers the per-sample IBS
        // values; the second pass scores with exactly those values.
        let baseline = misprediction_report(&model, &|_: &[f64]| Ok(0.5), &test).unwrap();
        assert!(baseline.rho_ibs.is_none(), "constant scores → undefined ρ");
        assert!(baseline.rho_median_diff.is_none());
        assert_eq!(baseline.scatter.len(), test.n_events());

        let lookup: std::collections::HashMap<usize, f64> = baseline
            .scatter
            .iter()
            .map(|r| (r.index, r.per_sample_ibs))
            .collect();
        let order: Vec<usize> = test.event_indices();
        let counter = std::sync::atomic::AtomicUsize::new(0);
        let scorer = move |_: &[f64]| -> Result<f64> {
            let k = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            Ok(lookup[&order[k]])
        };
        // score_batch iterates in parallel; use a sequential wrapper to keep
        // the positional lookup valid.
        struct Seq<F>(F);
        impl<F: Fn(&[f64]) -> Result<f64> + Sync> UncertaintyScorer for Seq<F> {
            fn score_one(&self, x: &[f64]) -> Result<f64> {
                (self.0)(x)
            }
            fn score_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
                xs.iter().map(|x| self.score_one(x)).collect()
            }
        }
        let report = misprediction_report(&model, &Seq(scorer), &test).unwrap();
        let rho = report.rho_ibs.unwrap();
        assert!(rho > 0.999_999, "ρ = {rho}");
    }

    #[test]
    fn independent_random_scores_have_no_correlation() {
        let spec = HazardMixtureSpec::new(4, 0.2, 97).unwrap();
        let (data, _) = generate(&spec, 2600).unwrap();
        let train = data.subset(&(0..400).collect::<Vec<_>>());
        let test = data.subset(&(400..2600).collect::<Vec<_>>());
        let model = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        let scorer = |x: &[f64]| -> Result<f64> {
            // Hash-based pseudo-random score, independent of the outcome.
            let h = x
                .iter()
                .map(|f| f.to_bits())
                .fold(0x9E3779B97F4A7C15u64, |a, b| {
                    (a ^ b).wrapping_mul(0xBF58476D1CE4E5B9)
                });
            Ok((h >> 11) as f64 / (1u64 << 53) as f64)
        };
        let report = misprediction_report(&model, &scorer, &test).unwrap();
        let rho = report.rho_ibs.unwrap();
        assert!(rho.abs() < 0.1, "ρ = {rho} for independent scores");
    }

    #[test]
    fn survunc_scores_correlate_positively_on_synthetic_data() {
        let (model, train, test) = small_world(101);
        let q = meta_quantifier(&model, &train, 101);
        let report = misprediction_report(&model, &q, &test).unwrap();
        let rho = report.rho_ibs.unwrap();
        assert!(rho > 0.0, "expected positive ρ, got {rho}");
    }

    #[test]
    fn ood_report_handles_separable_and_identical_scores() {
        let (_, train, test) = small_world(103);
        let ood = train.subset(&(0..100).collect::<Vec<_>>());
        let ind = test.subset(&(0..100).collect::<Vec<_>>());

        // Scores keyed on a covariate signature that is shifted for "OOD":
        // disjoint supports → perfect separation.
        let scorer = |x: &[f64]| Ok(x[0]);
        let shifted: Vec<usize> = (0..ood.n()).collect();
        let mut ood_hi = ood.subset(&shifted);
        // Manually shift feature 0 far beyond the IND range.
        let mut recs = ood_hi.records().to_vec();
        for r in &mut recs {
            r.covariates[0] += 1000.0;
        }
        ood_hi = SurvivalDataset::from_parts(recs, ood.feature_names().to_vec()).unwrap();
        let report = ood_report(&scorer, &ind, &ood_hi, 30).unwrap();
        assert_eq!(report.auroc.value, 1.0);
        assert_eq!(report.auprc.value, 1.0);
        assert_eq!(report.histograms.edges.len(), 31);
        assert_eq!(report.histograms.ind_counts.iter().sum::<usize>(), ind.n());
        assert_eq!(
            report.histograms.ood_counts.iter().sum::<usize>(),
            ood_hi.n()
        );

        // The same set on both sides ties every pair → AUROC 1/2.
        let report = ood_report(&scorer, &ind, &ind, 30).unwrap();
        assert_eq!(report.auroc.value, 0.5);

        // Dimension mismatch is rejected.
        let spec = HazardMixtureSpec::new(3, 0.0, 5).unwrap();
        let (other, _) = generate(&spec, 20).unwrap();
        assert!(ood_report(&scorer, &ind, &other, 30).is_err());
    }

    #[test]
    fn survunc_separates_shifted_covariates() {
        let (model, train, test) = small_world(107);
        let q = meta_quantifier(&model, &train, 107);
        let spec = HazardMixtureSpec::new(4, 0.25, 107).unwrap();
        let shift = crate::synth::default_ood_shift(4);
        let ood = generate_ood(&spec, 300, &shift).unwrap();
        let report = ood_report(&q, &test, &ood, 30).unwrap();
        assert!(
            report.auroc.value > 0.5,
            "AUROC {} should beat chance",
            report.auroc.value
        );
    }

    #[test]
    fn protocols_leave_model_and_quantifier_untouched() {
        let (model, train, test) = small_world(109);
        let q = meta_quantifier(&model, &train, 109);
        let model_before = serde_json::to_string(&model).unwrap();
        let q_before = serde_json::to_string(&q).unwrap();

        let _ = selective_prediction(&model, &q, &test, &[0.0, 0.3], 20, 3).unwrap();
        let _ = misprediction_report(&model, &q, &test).unwrap();
        let spec = HazardMixtureSpec::new(4, 0.25, 109).unwrap();
        let ood = generate_ood(&spec, 120, &crate::synth::default_ood_shift(4)).unwrap();
        let _ = ood_report(&q, &test, &ood, 30).unwrap();

        assert_eq!(serde_json::to_string(&model).unwrap(), model_before);
        assert_eq!(serde_json::to_string(&q).unwrap(), q_before);
    }

    #[test]
    fn reports_are_deterministic_and_schedule_independent() {
        let (model, train, test) = small_world(113);
        let q = meta_quantifier(&model, &train, 113);
        let a = selective_prediction(&model, &q, &test, &[0.0, 0.2], 40, 5).unwrap();
        let b = selective_prediction(&model, &q, &test, &[0.0, 0.2], 40, 5).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool
            .install(|| selective_prediction(&model, &q, &test, &[0.0, 0.2], 40, 5))
            .unwrap();
        assert_eq!(a, c);

        let r1 = misprediction_report(&model, &q, &test).unwrap();
        let r2 = pool.install(|| misprediction_report(&model, &q, &test)).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn quantifier_round_trips_through_its_file_format() {
        let (model, train, _) = small_world(127);
        let q = meta_quantifier(&model, &train, 127);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quantifier.metamodel.json");
        save_quantifier(&q, &path).unwrap();
        let back = load_quantifier(&path).unwrap();
        assert_eq!(q, back);
        assert_eq!(q.kind_name(), "survunc-rf");
        assert_eq!(q.dim(), 4);
        let x = vec![0.2, -0.4, 0.9, 0.0];
        assert_eq!(q.score_one(&x).unwrap(), back.score_one(&x).unwrap());

        // Ensemble quantifier round-trips too, and scores deterministically.
        let grid = event_quantile_grid(&train.times(), &train.events(), 16).unwrap();
        let ens = ensemble_fit(&train, None, &model, 3, 9).unwrap();
        let qe = Quantifier::Ensemble {
            ensemble: ens,
            grid,
            aggregation: Aggregation::MaxStd,
        };
        let pe = dir.path().join("ensemble.json");
        save_quantifier(&qe, &pe).unwrap();
        assert_eq!(load_quantifier(&pe).unwrap(), qe);
        assert_eq!(qe.kind_name(), "ensemble");

        // Foreign envelope rejected.
        assert!(load_quantifier(&dir.path().join("missing.json")).is_err());
        crate::synth::save_oracle(
            &crate::synth::SynthOracle {
                spec: HazardMixtureSpec::new(3, 0.0, 1).unwrap(),
            },
            &dir.path().join("oracle.json"),
        )
        .unwrap();
        assert!(load_quantifier(&dir.path().join("oracle.json")).is_err());
    }
}
