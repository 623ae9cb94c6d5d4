//! Nonparametric estimators shared across the crate: Kaplan-Meier survival,
//! the censoring-distribution Kaplan-Meier used for inverse-probability
//! weighting, Nelson-Aalen cumulative hazard, and the Breslow baseline
//! hazard for proportional-hazards models.

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalCurve, TimeGrid};
use crate::error::{Result, SurvError};

/// Non-decreasing step function `H(t)` with `H(t) = 0` before its first
/// grid point; survival follows as `S(t) = exp(-H(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeHazard {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl CumulativeHazard {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SurvError::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let mut prev = 0.0f64;
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(SurvError::InvalidArgument(format!(
                    "cumulative hazard value {v} must be finite and non-negative"
                )));
            }
            if v + 1e-12 < prev {
                return Err(SurvError::InvalidArgument(
                    "cumulative hazard must be non-decreasing".into(),
                ));
            }
            prev = v;
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `H(t)` by right-continuous step interpolation, zero before the grid.
    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.step_index(t) {
            Some(k) => self.values[k],
            None => 0.0,
        }
    }

    /// `S(t) = exp(-H(t))` on the same grid.
    pub fn to_survival(&self) -> SurvivalCurve {
        let probs = self.values.iter().map(|&h| (-h).exp()).collect();
        SurvivalCurve::new(self.grid.clone(), probs)
            .expect("exp(-H) of a non-decreasing H is a valid survival curve")
    }
}

fn check_inputs(times: &[f64], events: &[bool]) -> Result<()> {
    if times.is_empty() {
        return Err(SurvError::InvalidArgument(
            "estimator needs at least one observation".into(),
        ));
    }
    if times.len() != events.len() {
        return Err(SurvError::DimensionMismatch {
            expected: times.len(),
            got: events.len(),
        });
    }
    for &t in times {
        if !t.is_finite() || t <= 0.0 {
            return Err(SurvError::InvalidArgument(format!(
                "observation times must be positive and finite, got {t}"
            )));
        }
    }
    Ok(())
}

/// Distinct event times with `(time, n_events, n_at_risk)`, ascending.
/// The risk set at `t` counts every subject with observed time `>= t`.
fn risk_table(times: &[f64], events: &[bool]) -> Vec<(f64, usize, usize)> {
    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());

    let mut table = Vec::new();
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let at_risk = n - i;
        let mut d = 0;
        let mut j = i;
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            table.push((t, d, at_risk));
        }
        i = j;
    }
    table
}

/// Kaplan-Meier product-limit estimator of the survival function.
///
/// The curve's grid holds the distinct event times; with no observed events
/// the curve is identically one on a single point at the largest time.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    check_inputs(times, events)?;
    let table = risk_table(times, events);
    if table.is_empty() {
        let t_max = times.iter().cloned().fold(f64::MIN, f64::max);
        return SurvivalCurve::new(TimeGrid::new(vec![t_max])?, vec![1.0]);
    }
    let mut grid = Vec::with_capacity(table.len());
    let mut probs = Vec::with_capacity(table.len());
    let mut s = 1.0;
    for (t, d, r) in table {
        s *= 1.0 - d as f64 / r as f64;
        grid.push(t);
        probs.push(s.max(0.0));
    }
    SurvivalCurve::new(TimeGrid::new(grid)?, probs)
}

/// Kaplan-Meier estimator of the censoring distribution `G(t) = P(C > t)`,
/// obtained by exchanging the roles of event and censoring.
pub fn censoring_kaplan_meier(times: &[f64], events: &[bool]) -> Result<SurvivalCurve> {
    let flipped: Vec<bool> = events.iter().map(|&e| !e).collect();
    kaplan_meier(times, &flipped)
}

/// Nelson-Aalen estimator of the cumulative hazard.
pub fn nelson_aalen(times: &[f64], events: &[bool]) -> Result<CumulativeHazard> {
    check_inputs(times, events)?;
    let table = risk_table(times, events);
    if table.is_empty() {
        let t_max = times.iter().cloned().fold(f64::MIN, f64::max);
        return CumulativeHazard::new(TimeGrid::new(vec![t_max])?, vec![0.0]);
    }
    let mut grid = Vec::with_capacity(table.len());
    let mut values = Vec::with_capacity(table.len());
    let mut h = 0.0;
    for (t, d, r) in table {
        h += d as f64 / r as f64;
        grid.push(t);
        values.push(h);
    }
    CumulativeHazard::new(TimeGrid::new(grid)?, values)
}

/// Breslow estimator of the baseline cumulative hazard for a
/// proportional-hazards model with per-subject linear predictors `eta`:
/// `H0(t) = sum over event times t_k <= t of d_k / sum_{j: t_j >= t_k} exp(eta_j)`.
///
/// With all-zero predictors this reduces to Nelson-Aalen.
pub fn breslow_baseline(
    times: &[f64],
    events: &[bool],
    linear_predictors: &[f64],
) -> Result<CumulativeHazard> {
    check_inputs(times, events)?;
    if linear_predictors.len() != times.len() {
        return Err(SurvError::DimensionMismatch {
            expected: times.len(),
            got: linear_predictors.len(),
        });
    }
    for &e in linear_predictors {
        if !e.is_finite() {
            return Err(SurvError::InvalidArgument(
                "linear predictors must be finite".into(),
            ));
        }
    }

    let n = times.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap());

    // Suffix sums of exp(eta) in time order give each risk-set denominator.
    let mut suffix = vec![0.0f64; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + linear_predictors[order[i]].exp();
    }

    let mut grid = Vec::new();
    let mut values = Vec::new();
    let mut h = 0.0;
    let mut i = 0;
    while i < n {
        let t = times[order[i]];
        let denom = suffix[i];
        let mut d = 0;
        let mut j = i;
        while j < n && times[order[j]] == t {
            if events[order[j]] {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            h += d as f64 / denom;
            grid.push(t);
            values.push(h);
        }
        i = j;
    }
    if grid.is_empty() {
        let t_max = times.iter().cloned().fold(f64::MIN, f64::max);
        return CumulativeHazard::new(TimeGrid::new(vec![t_max])?, vec![0.0]);
    }
    CumulativeHazard::new(TimeGrid::new(grid)?, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn km_matches_hand_computation() {
        // n=5: events at 1, 2, 4; censored at 3 and 5.
        let times = [1.0, 2.0, 3.0, 4.0, 5.0];
        let events = [true, true, false, true, false];
        let km = kaplan_meier(&times, &events).unwrap();
        assert_eq!(km.grid().times(), &[1.0, 2.0, 4.0]);
        let want = [0.8, 0.8 * 0.75, 0.8 * 0.75 * 0.5];
        for (p, w) in km.probabilities().iter().zip(want.iter()) {
            assert!((p - w).abs() < 1e-15, "{p} vs {w}");
        }
        assert!((km.eval(3.5) - 0.6).abs() < 1e-15);
        assert!((km.eval(100.0) - 0.3).abs() < 1e-15);
        assert_eq!(km.eval(0.5), 1.0);
    }

    #[test]
    fn km_handles_tied_events() {
        let times = [2.0, 2.0, 3.0];
        let events = [true, true, true];
        let km = kaplan_meier(&times, &events).unwrap();
        assert_eq!(km.grid().times(), &[2.0, 3.0]);
        assert!((km.probabilities()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.probabilities()[1], 0.0);
    }

    #[test]
    fn km_without_events_is_one() {
        let times = [1.0, 2.0];
        let events = [false, false];
        let km = kaplan_meier(&times, &events).unwrap();
        assert_eq!(km.eval(1e9), 1.0);
    }

    #[test]
    fn km_without_censoring_is_empirical_survival() {
        let mut rng = crate::seed::rng(11, "km-emp", 0);
        let times: Vec<f64> = (0..60)
            .map(|_| rand::Rng::random_range(&mut rng, 0.1..10.0))
            .collect();
        let events = vec![true; 60];
        let km = kaplan_meier(&times, &events).unwrap();
        for &q in &[0.5, 1.0, 3.0, 5.0, 9.9, 12.0] {
            let emp = times.iter().filter(|&&t| t > q).count() as f64 / 60.0;
            assert!(
                (km.eval(q) - emp).abs() < 1e-12,
                "S({q}): km {} vs empirical {emp}",
                km.eval(q)
            );
        }
    }

    #[test]
    fn censoring_km_matches_hand_computation() {
        let times = [1.0, 2.0, 3.0];
        let events = [true, false, false];
        let g = censoring_kaplan_meier(&times, &events).unwrap();
        assert_eq!(g.grid().times(), &[2.0, 3.0]);
        assert!((g.probabilities()[0] - 0.5).abs() < 1e-15);
        assert_eq!(g.probabilities()[1], 0.0);
        // Left limits used by inverse-probability weighting.
        assert_eq!(g.eval_left(2.0), 1.0);
        assert_eq!(g.eval_left(3.0), 0.5);
    }

    #[test]
    fn nelson_aalen_matches_hand_computation() {
        let times = [1.0, 2.0, 3.0, 4.0, 5.0];
        let events = [true, true, false, true, false];
        let na = nelson_aalen(&times, &events).unwrap();
        assert_eq!(na.grid().times(), &[1.0, 2.0, 4.0]);
        let want = [0.2, 0.2 + 0.25, 0.2 + 0.25 + 0.5];
        for (v, w) in na.values().iter().zip(want.iter()) {
            assert!((v - w).abs() < 1e-15);
        }
        assert_eq!(na.eval(0.9), 0.0);
        assert!((na.eval(4.5) - 0.95).abs() < 1e-15);
        let s = na.to_survival();
        assert!((s.eval(2.5) - (-0.45f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn breslow_with_zero_predictors_equals_nelson_aalen() {
        let mut rng = crate::seed::rng(13, "breslow-na", 0);
        let times: Vec<f64> = (0..50)
            .map(|_| rand::Rng::random_range(&mut rng, 0.1..20.0))
            .collect();
        let events: Vec<bool> = (0..50).map(|i| i % 3 != 0).collect();
        let eta = vec![0.0; 50];
        let br = breslow_baseline(&times, &events, &eta).unwrap();
        let na = nelson_aalen(&times, &events).unwrap();
        assert_eq!(br.grid().times(), na.grid().times());
        for (a, b) in br.values().iter().zip(na.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn breslow_matches_hand_computation() {
        // Three subjects, all events, exp(eta) = 1, 2, 3 in time order.
        let times = [1.0, 2.0, 3.0];
        let events = [true, true, true];
        let eta = [0.0, 2.0f64.ln(), 3.0f64.ln()];
        let br = breslow_baseline(&times, &events, &eta).unwrap();
        let want = [1.0 / 6.0, 1.0 / 6.0 + 1.0 / 5.0, 1.0 / 6.0 + 1.0 / 5.0 + 1.0 / 3.0];
        for (v, w) in br.values().iter().zip(want.iter()) {
            assert!((v - w).abs() < 1e-15, "{v} vs {w}");
        }
    }

    #[test]
    fn estimators_reject_bad_inputs() {
        assert!(kaplan_meier(&[], &[]).is_err());
        assert!(kaplan_meier(&[1.0], &[true, false]).is_err());
        assert!(kaplan_meier(&[0.0], &[true]).is_err());
        assert!(kaplan_meier(&[f64::NAN], &[true]).is_err());
        assert!(breslow_baseline(&[1.0], &[true], &[f64::INFINITY]).is_err());
    }
}
