//! Evaluation metrics: time-dependent concordance, IPCW Brier score and its
//! integral, per-sample integrated Brier score, median-survival differences,
//! Pearson correlation, AUROC/AUPRC, bootstrap resampling, and the Wilcoxon
//! signed-rank test.

use rayon::prelude::*;

use crate::data::{SurvivalCurve, TimeGrid};
use crate::error::{Result, SurvError};
use crate::seed;

/// A named metric outcome with the count of units that actually contributed
/// (samples for the scalar metrics, comparable pairs for concordance).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    pub n_used: usize,
}

/// IPCW Brier score at a single time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierScore {
    pub value: f64,
    /// Samples in the mean (those with a usable censoring weight).
    pub n_used: usize,
    /// Samples dropped because their censoring weight denominator was 0.
    pub dropped: usize,
}

fn check_aligned(curves: &[SurvivalCurve], times: &[f64], events: &[bool]) -> Result<()> {
    if curves.len() != times.len() || times.len() != events.len() {
        return Err(SurvError::InvalidArgument(format!(
            "curves/times/events must align ({}/{}/{})",
            curves.len(),
            times.len(),
            events.len()
        )));
    }
    if curves.is_empty() {
        return Err(SurvError::InvalidArgument("no samples".into()));
    }
    Ok(())
}

/// Time-dependent concordance: over ordered sample pairs `(i, j)`, the
/// fraction of comparable pairs (`i` uncensored, `t_i < t_j`) the curves
/// rank correctly, i.e. `S(t_i|x_i) < S(t_i|x_j)` strictly — ties count as
/// discordant. Exact double sum; `n_used` is the comparable-pair count.
pub fn c_td(curves: &[SurvivalCurve], times: &[f64], events: &[bool]) -> Result<MetricValue> {
    check_aligned(curves, times, events)?;
    let n = curves.len();
    let per_i: Vec<(u64, u64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !events[i] {
                return (0u64, 0u64);
            }
            let t_i = times[i];
            let s_ii = curves[i].eval(t_i);
            let mut num = 0u64;
            let mut den = 0u64;
            for j in 0..n {
                if t_i < times[j] {
                    den += 1;
                    if s_ii < curves[j].eval(t_i) {
                        num += 1;
                    }
                }
            }
            (num, den)
        })
        .collect();
    let num: u64 = per_i.iter().map(|p| p.0).sum();
    let den: u64 = per_i.iter().map(|p| p.1).sum();
    if den == 0 {
        return Err(SurvError::Undefined(
            "concordance needs at least one comparable pair".into(),
        ));
    }
    Ok(MetricValue {
        name: "c_td".into(),
        value: num as f64 / den as f64,
        n_used: den as usize,
    })
}

/// IPCW Brier score at time `t`.
///
/// Mean over samples of
/// `S(t|x_i)^2 · 1(t ≥ t_i, δ_i=1) / Ĝ(t_i⁻)  +  (1−S(t|x_i))^2 · 1(t < t_i) / Ĝ(t)`
/// where `Ĝ` is the censoring survival curve; the first term weights by the
/// left limit `Ĝ(t_i⁻)`. A sample whose required weight denominator is 0 is
/// dropped from both the sum and the count (reported in `dropped`).
pub fn brier(
    curves: &[SurvivalCurve],
    times: &[f64],
    events: &[bool],
    t: f64,
    censor_curve: &SurvivalCurve,
) -> Result<BrierScore> {
    check_aligned(curves, times, events)?;
    let g_t = censor_curve.eval(t);
    let mut acc = 0.0;
    let mut n_used = 0usize;
    let mut dropped = 0usize;
    for i in 0..curves.len() {
        let s = curves[i].eval(t);
        if t >= times[i] && events[i] {
            let g = censor_curve.eval_left(times[i]);
            if g == 0.0 {
                dropped += 1;
                continue;
            }
            acc += s * s / g;
            n_used += 1;
        } else if t < times[i] {
            if g_t == 0.0 {
                dropped += 1;
                continue;
            }
            acc += (1.0 - s) * (1.0 - s) / g_t;
            n_used += 1;
        } else {
            // Censored at or before t: indicator 0 in both terms, but the
            // sample still counts toward the mean.
            n_used += 1;
        }
    }
    if dropped > 0 {
        log::warn!("Brier score at t={t}: dropped {dropped} samples with zero censoring weight");
    }
    if n_used == 0 {
        return Err(SurvError::Undefined(format!(
            "Brier score at t={t}: every sample had a zero censoring weight"
        )));
    }
    Ok(BrierScore {
        value: acc / n_used as f64,
        n_used,
        dropped,
    })
}

/// Integrated Brier score: trapezoidal integral of `BS(t)` over `grid`,
/// normalized by the grid span. `n_used` is the number of samples that
/// contributed at every grid time.
pub fn ibs(
    curves: &[SurvivalCurve],
    times: &[f64],
    events: &[bool],
    grid: &TimeGrid,
    censor_curve: &SurvivalCurve,
) -> Result<MetricValue> {
    check_aligned(curves, times, events)?;
    if grid.len() < 2 {
        return Err(SurvError::InvalidArgument(
            "integrating the Brier score needs a grid of at least 2 times".into(),
        ));
    }
    let pts = grid.times();
    let span = pts[pts.len() - 1] - pts[0];
    let scores: Vec<BrierScore> = pts
        .iter()
        .map(|&t| brier(curves, times, events, t, censor_curve))
        .collect::<Result<_>>()?;
    let mut integral = 0.0;
    for k in 0..pts.len() - 1 {
        integral += 0.5 * (scores[k].value + scores[k + 1].value) * (pts[k + 1] - pts[k]);
    }
    let max_dropped = scores.iter().map(|s| s.dropped).max().unwrap_or(0);
    Ok(MetricValue {
        name: "ibs".into(),
        value: integral / span,
        n_used: curves.len() - max_dropped,
    })
}

/// The `i`-th sample's summand of `BS(t)` integrated over `grid` and
/// normalized by the span, so that on censoring-weight-clean data the mean
/// over samples of this quantity equals [`ibs`].
///
/// Grid times where the sample's censoring weight denominator is 0
/// contribute 0 (consistent with the aggregate's drop rule).
pub fn per_sample_ibs(
    curve: &SurvivalCurve,
    t_i: f64,
    event: bool,
    grid: &TimeGrid,
    censor_curve: &SurvivalCurve,
) -> Result<f64> {
    if grid.len() < 2 {
        return Err(SurvError::InvalidArgument(
            "integrating the Brier score needs a grid of at least 2 times".into(),
        ));
    }
    let pts = grid.times();
    let span = pts[pts.len() - 1] - pts[0];
    let g_left = censor_curve.eval_left(t_i);
    let summand = |t: f64| -> f64 {
        let s = curve.eval(t);
        if t >= t_i && event {
            if g_left == 0.0 {
                return 0.0;
            }
            s * s / g_left
        } else if t < t_i {
            let g_t = censor_curve.eval(t);
            if g_t == 0.0 {
                return 0.0;
            }
            (1.0 - s) * (1.0 - s) / g_t
        } else {
            0.0
        }
    };
    let values: Vec<f64> = pts.iter().map(|&t| summand(t)).collect();
    let mut integral = 0.0;
    for k in 0..pts.len() - 1 {
        integral += 0.5 * (values[k] + values[k + 1]) * (pts[k + 1] - pts[k]);
    }
    Ok(integral / span)
}

/// Absolute difference between the curve's median survival time
/// (`min{t | S(t) ≤ 0.5}`) and the observed event time. When the curve never
/// reaches 0.5 the last grid time stands in and `fallback` is set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedianDiff {
    pub value: f64,
    pub fallback: bool,
}

pub fn median_survival_diff(curve: &SurvivalCurve, t_event: f64) -> MedianDiff {
    let (median, crossed) = curve.median_time();
    MedianDiff {
        value: (median - t_event).abs(),
        fallback: !crossed,
    }
}

/// Product-moment correlation of two equally long, non-constant vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(SurvError::InvalidArgument(format!(
            "correlation needs two equally long vectors of at least 2 values ({}/{})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(SurvError::Undefined(
            "correlation is undefined for a constant vector".into(),
        ));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; n];
    let mut k = 0;
    while k < n {
        let mut q = k;
        while q < n && values[order[q]] == values[order[k]] {
            q += 1;
        }
        // Positions k..q (0-based) share the average of ranks k+1..=q.
        let avg = (k + 1 + q) as f64 / 2.0;
        for &idx in &order[k..q] {
            ranks[idx] = avg;
        }
        k = q;
    }
    ranks
}

/// Area under the ROC curve by the rank (Mann-Whitney) statistic; tied
/// scores count one half. Positives are expected to score higher.
pub fn auroc(neg_scores: &[f64], pos_scores: &[f64]) -> Result<MetricValue> {
    if neg_scores.is_empty() || pos_scores.is_empty() {
        return Err(SurvError::InvalidArgument(
            "AUROC needs at least one score in each class".into(),
        ));
    }
    let mut all: Vec<f64> = Vec::with_capacity(neg_scores.len() + pos_scores.len());
    all.extend_from_slice(pos_scores);
    all.extend_from_slice(neg_scores);
    let ranks = average_ranks(&all);
    let p = pos_scores.len() as f64;
    let n = neg_scores.len() as f64;
    let pos_rank_sum: f64 = ranks[..pos_scores.len()].iter().sum();
    let u = pos_rank_sum - p * (p + 1.0) / 2.0;
    Ok(MetricValue {
        name: "auroc".into(),
        value: u / (p * n),
        n_used: all.len(),
    })
}

/// Area under the precision-recall curve by step-wise summation over the
/// distinct-score thresholds (no interpolation). Positives are expected to
/// score higher.
pub fn auprc(neg_scores: &[f64], pos_scores: &[f64]) -> Result<MetricValue> {
    if neg_scores.is_empty() || pos_scores.is_empty() {
        return Err(SurvError::InvalidArgument(
            "AUPRC needs at least one score in each class".into(),
        ));
    }
    let mut labeled: Vec<(f64, bool)> = pos_scores
        .iter()
        .map(|&s| (s, true))
        .chain(neg_scores.iter().map(|&s| (s, false)))
        .collect();
    labeled.sort_by(|a, b| b.0.total_cmp(&a.0)); // descending score
    let p_total = pos_scores.len() as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut k = 0;
    while k < labeled.len() {
        // Process one group of tied scores atomically.
        let mut q = k;
        while q < labeled.len() && labeled[q].0 == labeled[k].0 {
            if labeled[q].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            q += 1;
        }
        let recall = tp / p_total;
        let precision = tp / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        k = q;
    }
    Ok(MetricValue {
        name: "auprc".into(),
        value: area,
        n_used: labeled.len(),
    })
}

/// Default number of points in an event-time quantile grid.
pub const DEFAULT_GRID_POINTS: usize = 64;

/// Evaluation grid built from the quantiles of the observed event times, so
/// that grid density follows the event mass. Duplicate quantiles collapse;
/// fewer than 2 distinct event times is an error.
pub fn event_quantile_grid(times: &[f64], events: &[bool], points: usize) -> Result<TimeGrid> {
    if times.len() != events.len() {
        return Err(SurvError::InvalidArgument(
            "times and events must align".into(),
        ));
    }
    if points < 2 {
        return Err(SurvError::InvalidArgument(
            "a quantile grid needs at least 2 points".into(),
        ));
    }
    let mut event_times: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    let m = event_times.len();
    if m < 2 {
        return Err(SurvError::InvalidArgument(
            "a quantile grid needs at least 2 observed events".into(),
        ));
    }
    let mut grid_times = Vec::with_capacity(points);
    for k in 0..points {
        let pos = (k as f64 / (points - 1) as f64) * (m - 1) as f64;
        let q = event_times[pos.round() as usize];
        if grid_times.last().is_none_or(|&last| q > last) {
            grid_times.push(q);
        }
    }
    if grid_times.len() < 2 {
        return Err(SurvError::InvalidArgument(
            "the event times collapse to a single quantile; no usable grid".into(),
        ));
    }
    TimeGrid::new(grid_times)
}

/// Bootstrap summary over `B` resampling replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub mean: f64,
    /// Sample standard deviation (divisor B−1) of the replicate values.
    pub stddev: f64,
    pub replicates: Vec<f64>,
    /// Replicates whose metric evaluation failed (excluded from the stats).
    pub skipped: usize,
}

/// Default bootstrap resampling iterations.
pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 100;

/// Evaluate `metric_fn` on `b` bootstrap resamples (with replacement) of
/// `0..n`. Replicate `r` draws from the RNG stream `(seed, "bootstrap", r)`,
/// so results are deterministic and schedule-independent. A replicate whose
/// metric fails (e.g. no comparable pairs survived resampling) is skipped
/// and counted; more than 10% skipped is an error.
pub fn bootstrap<F>(metric_fn: F, n: usize, b: usize, seed_value: u64) -> Result<BootstrapSummary>
where
    F: Fn(&[usize]) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(SurvError::InvalidArgument(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if n == 0 {
        return Err(SurvError::InvalidArgument(
            "bootstrap needs a non-empty sample".into(),
        ));
    }
    let outcomes: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::rng(seed_value, "bootstrap", r as u64);
            let indices: Vec<usize> = (0..n)
                .map(|_| rand::Rng::random_range(&mut rng, 0..n))
                .collect();
            metric_fn(&indices)
        })
        .collect();
    let mut replicates = Vec::with_capacity(b);
    let mut skipped = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(v) => replicates.push(v),
            Err(e) => {
                skipped += 1;
                log::warn!("bootstrap replicate skipped: {e}");
            }
        }
    }
    if skipped * 10 > b {
        return Err(SurvError::Undefined(format!(
            "{skipped} of {b} bootstrap replicates failed (more than 10%)"
        )));
    }
    if replicates.iter().all(|v| *v == replicates[0]) {
        // A constant metric has exactly zero spread; don't let the mean's
        // rounding manufacture any.
        return Ok(BootstrapSummary {
            mean: replicates[0],
            stddev: 0.0,
            replicates,
            skipped,
        });
    }
    let m = replicates.len() as f64;
    let mean = replicates.iter().sum::<f64>() / m;
    let var = replicates
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / (m - 1.0);
    Ok(BootstrapSummary {
        mean,
        stddev: var.sqrt(),
        replicates,
        skipped,
    })
}

/// Exact two-sided p-value for the smaller signed-rank sum `w` given the
/// (doubled, to stay integral under average ranks) rank values: enumerate
/// the null distribution of the negative-rank sum by subset-sum counting.
fn wilcoxon_exact_p(doubled_ranks: &[u64], w_doubled: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; (total + 1) as usize];
    counts[0] = 1.0;
    let mut reach = 0u64;
    for &r in doubled_ranks {
        reach = (reach + r).min(total);
        let r = r as usize;
        // Walk downward so each rank is used at most once.
        for s in (r..=reach as usize).rev() {
            counts[s] += counts[s - r];
        }
    }
    let below: f64 = counts[..=(w_doubled.min(total)) as usize].iter().sum();
    let p = 2.0 * below / 2f64.powi(doubled_ranks.len() as i32);
    p.min(1.0)
}

/// Normal-approximation two-sided p-value with continuity correction and
/// tie correction, for the smaller signed-rank sum `w` over `n` nonzero
/// differences; `tie_sizes` are the sizes of tied groups of |difference|.
fn wilcoxon_normal_p(n: usize, w: f64, tie_sizes: &[usize]) -> Result<f64> {
    use statrs::distribution::ContinuousCDF;
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return Err(SurvError::Undefined(
            "signed-rank variance is zero (all differences tied)".into(),
        ));
    }
    // w ≤ mean by construction (it is the smaller sum); correct toward the
    // center by half a step.
    let z = (w - mean + 0.5) / var.sqrt();
    let normal = statrs::distribution::Normal::new(0.0, 1.0)
        .map_err(|e| SurvError::InvalidArgument(e.to_string()))?;
    Ok((2.0 * normal.cdf(z)).min(1.0))
}

/// Wilcoxon signed-rank test for paired vectors.
///
/// Zero differences are dropped; |differences| are ranked with average ranks
/// for ties; the statistic is the smaller of the positive- and
/// negative-rank sums. The two-sided p-value is exact (subset-sum
/// enumeration over sign assignments) for up to 25 nonzero differences and
/// a normal approximation with continuity and tie corrections beyond that.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() || a.len() < 6 {
        return Err(SurvError::InvalidArgument(format!(
            "the signed-rank test needs two equally long vectors of at least 6 values ({}/{})",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.is_empty() {
        return Err(SurvError::Undefined(
            "every paired difference is zero; the test is undefined".into(),
        ));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = ranks
        .iter()
        .zip(&diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(r, _)| r)
        .sum();
    let total = n as f64 * (n as f64 + 1.0) / 2.0;
    let w_minus = total - w_plus;
    let w = w_plus.min(w_minus);

    let p = if n <= 25 {
        // Average ranks are multiples of 1/2; double them to stay integral.
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        wilcoxon_exact_p(&doubled, (2.0 * w).round() as u64)
    } else {
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let mut tie_sizes = Vec::new();
        let mut k = 0;
        while k < n {
            let mut q = k;
            while q < n && sorted[q] == sorted[k] {
                q += 1;
            }
            if q - k > 1 {
                tie_sizes.push(q - k);
            }
            k = q;
        }
        wilcoxon_normal_p(n, w, &tie_sizes)?
    };
    Ok((w, p))
}
