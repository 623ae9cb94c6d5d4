//! Linear proportional-hazards model fitted by Newton-Raphson on the
//! tied-risk-set (Breslow) log partial likelihood, with step-halving and a
//! Breslow baseline hazard for absolute survival predictions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::data::{SurvivalCurve, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::estimators::{breslow_baseline, CumulativeHazard};
use crate::models::{check_dim, Capabilities, SurvivalModel};

/// Fitted linear proportional-hazards model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    #[serde(with = "blob::f64s")]
    pub beta: Vec<f64>,
    pub baseline: CumulativeHazard,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Log partial likelihood and its gradient at `beta` (Breslow ties).
pub fn cox_log_likelihood_grad(
    dataset: &SurvivalDataset,
    beta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let (ll, grad, _) = likelihood_internals(dataset, beta, false)?;
    Ok((ll, grad))
}

/// Shared sweep computing the log partial likelihood, gradient, and
/// (optionally) the Hessian in one pass over subjects sorted by time.
///
/// Risk sets are cumulative sums taken in descending time order; subjects
/// tied with an event time stay in that event's risk set.
fn likelihood_internals(
    dataset: &SurvivalDataset,
    beta: &[f64],
    with_hessian: bool,
) -> Result<(f64, Vec<f64>, Option<DMatrix<f64>>)> {
    let n = dataset.n();
    let d = dataset.d();
    if beta.len() != d {
        return Err(SurvError::DimensionMismatch {
            expected: d,
            got: beta.len(),
        });
    }
    if dataset.n_events() == 0 {
        return Err(SurvError::InvalidArgument(
            "partial likelihood undefined without events".into(),
        ));
    }

    let eta: Vec<f64> = dataset
        .records()
        .iter()
        .map(|r| r.covariates.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    // Stabilize exponentials around the largest linear predictor.
    let c = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dataset.record(b)
            .time
            .partial_cmp(&dataset.record(a).time)
            .unwrap()
    });

    let mut s0 = 0.0f64;
    let mut s1 = vec![0.0f64; d];
    let mut s2 = if with_hessian {
        Some(DMatrix::<f64>::zeros(d, d))
    } else {
        None
    };

    let mut ll = 0.0f64;
    let mut grad = vec![0.0f64; d];
    let mut hess = if with_hessian {
        Some(DMatrix::<f64>::zeros(d, d))
    } else {
        None
    };

    let mut p = 0;
    while p < n {
        let t = dataset.record(order[p]).time;
        // Add the whole tie group to the running risk-set sums first.
        let mut q = p;
        while q < n && dataset.record(order[q]).time == t {
            let i = order[q];
            let w = (eta[i] - c).exp();
            let x = &dataset.record(i).covariates;
            s0 += w;
            for (s, xi) in s1.iter_mut().zip(x) {
                *s += w * xi;
            }
            if let Some(s2) = s2.as_mut() {
                for a in 0..d {
                    let wa = w * x[a];
                    for b in a..d {
                        let v = wa * x[b];
                        s2[(a, b)] += v;
                        if a != b {
                            s2[(b, a)] += v;
                        }
                    }
                }
            }
            q += 1;
        }
        // Contributions from events at this time.
        let mut d_k = 0usize;
        for &i in &order[p..q] {
            if dataset.record(i).event {
                d_k += 1;
                ll += eta[i];
                for (g, xi) in grad.iter_mut().zip(&dataset.record(i).covariates) {
                    *g += xi;
                }
            }
        }
        if d_k > 0 {
            let dk = d_k as f64;
            ll -= dk * (c + s0.ln());
            let mean: Vec<f64> = s1.iter().map(|s| s / s0).collect();
            for (g, m) in grad.iter_mut().zip(&mean) {
                *g -= dk * m;
            }
            if let (Some(hess), Some(s2)) = (hess.as_mut(), s2.as_ref()) {
                for a in 0..d {
                    for b in 0..d {
                        hess[(a, b)] -= dk * (s2[(a, b)] / s0 - mean[a] * mean[b]);
                    }
                }
            }
        }
        p = q;
    }
    if !ll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(SurvError::Convergence(
            "non-finite partial likelihood; covariates may need standardization".into(),
        ));
    }
    Ok((ll, grad, hess))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fit a linear proportional-hazards model by Newton-Raphson with
/// step-halving; convergence is declared when the gradient's Euclidean norm
/// drops to `tol`. A singular Hessian triggers one ridge-damped retry.
pub fn cox_fit(train: &SurvivalDataset, tol: f64, max_iter: usize) -> Result<CoxModel> {
    if train.n_events() == 0 {
        return Err(SurvError::InvalidArgument(
            "cannot fit a hazard model on a dataset with zero events".into(),
        ));
    }
    let d = train.d();
    let mut beta = vec![0.0f64; d];
    let (mut ll, mut grad, mut hess_opt) = likelihood_internals(train, &beta, true)?;

    let mut iterations = 0usize;
    let mut grad_norm = l2(&grad);
    while grad_norm > tol {
        if iterations >= max_iter {
            return Err(SurvError::Convergence(format!(
                "no convergence after {max_iter} Newton iterations \
                 (gradient norm {grad_norm:.3e}); data may be separable"
            )));
        }
        let hess = hess_opt.take().expect("fit pass always computes the Hessian");
        let a = -hess;
        let g = DVector::from_column_slice(&grad);
        let step = match a.clone().lu().solve(&g) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                let damped = a + DMatrix::<f64>::identity(d, d) * 1e-6;
                match damped.lu().solve(&g) {
                    Some(s) if s.iter().all(|v| v.is_finite()) => s,
                    _ => {
                        return Err(SurvError::Convergence(
                            "singular Hessian even after ridge damping; \
                             check for redundant covariates"
                                .into(),
                        ))
                    }
                }
            }
        };

        // Step-halving: the likelihood is concave, so a short enough step
        // along the Newton direction must not decrease it.
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + alpha * s)
                .collect();
            match likelihood_internals(train, &candidate, true) {
                Ok((new_ll, new_grad, new_hess)) if new_ll >= ll - 1e-10 * ll.abs().max(1.0) => {
                    accepted = Some((candidate, new_ll, new_grad, new_hess));
                    break;
                }
                _ => alpha *= 0.5,
            }
        }
        let Some((new_beta, new_ll, new_grad, new_hess)) = accepted else {
            return Err(SurvError::Convergence(format!(
                "step-halving failed to improve the likelihood \
                 (gradient norm {grad_norm:.3e})"
            )));
        };
        beta = new_beta;
        ll = new_ll;
        grad = new_grad;
        hess_opt = new_hess;
        grad_norm = l2(&grad);
        iterations += 1;
    }

    let eta: Vec<f64> = train
        .records()
        .iter()
        .map(|r| r.covariates.iter().zip(&beta).map(|(x, b)| x * b).sum())
        .collect();
    let baseline = breslow_baseline(&train.times(), &train.events(), &eta)?;

    Ok(CoxModel {
        beta,
        baseline,
        iterations,
        final_gradient_norm: grad_norm,
        tol,
        max_iter,
    })
}

impl CoxModel {
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.beta.len(), x)?;
        Ok(x.iter().zip(&self.beta).map(|(a, b)| a * b).sum())
    }

    fn survival_at_hazard(&self, h0: f64, eta: f64) -> f64 {
        if h0 == 0.0 {
            1.0
        } else {
            (-(h0 * eta.exp())).exp()
        }
    }
}

impl SurvivalModel for CoxModel {
    fn dim(&self) -> usize {
        self.beta.len()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_dropout: false,
            supports_reseed: false,
        }
    }

    fn native_grid(&self) -> &TimeGrid {
        self.baseline.grid()
    }

    fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
        let eta = self.linear_predictor(x)?;
        let probs = grid
            .times()
            .iter()
            .map(|&t| self.survival_at_hazard(self.baseline.eval(t), eta))
            .collect();
        SurvivalCurve::new(grid.clone(), probs)
    }

    fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
        let eta = self.linear_predictor(x)?;
        Ok(self.survival_at_hazard(self.baseline.eval(t), eta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::nelson_aalen;
    use crate::mlp::max_relative_gap;
    use crate::models::test_support::ph_dataset;

    #[test]
    fn gradient_matches_finite_differences() {
        for cfg in 0..5u64 {
            let d = 2 + (cfg as usize % 3);
            let beta_true: Vec<f64> = (0..d).map(|j| 0.4 * (j as f64 + 1.0)).collect();
            let ds = ph_dataset(25, &beta_true, 0.2, 0.3, 40 + cfg);
            let mut rng = crate::seed::rng(50 + cfg, "cox-fd-beta", 0);
            let beta: Vec<f64> = (0..d).map(|_| crate::seed::standard_normal(&mut rng) * 0.5).collect();
            let (_, grad) = cox_log_likelihood_grad(&ds, &beta).unwrap();

            let h = 1e-5;
            let mut fd = Vec::with_capacity(d);
            for k in 0..d {
                let mut up = beta.clone();
                up[k] += h;
                let mut down = beta.clone();
                down[k] -= h;
                let lu = cox_log_likelihood_grad(&ds, &up).unwrap().0;
                let ld = cox_log_likelihood_grad(&ds, &down).unwrap().0;
                fd.push((lu - ld) / (2.0 * h));
            }
            let gap = max_relative_gap(&grad, &fd);
            assert!(gap < 1e-5, "config {cfg}: gradient gap {gap}");
        }
    }

    #[test]
    fn fit_recovers_null_and_nonnull_coefficients() {
        // Covariate independent of survival: the estimate stays near zero.
        let ds = ph_dataset(500, &[0.0], 0.5, 0.2, 7);
        let m = cox_fit(&ds, 1e-6, 64).unwrap();
        assert!(m.beta[0].abs() < 0.3, "null beta estimate {}", m.beta[0]);
        assert!(m.final_gradient_norm <= 1e-6);

        // True effect recovered on a larger sample.
        let ds = ph_dataset(2000, &[1.0, -0.5], 0.5, 0.2, 8);
        let m = cox_fit(&ds, 1e-6, 64).unwrap();
        assert!((m.beta[0] - 1.0).abs() < 0.15, "beta0 {}", m.beta[0]);
        assert!((m.beta[1] + 0.5).abs() < 0.15, "beta1 {}", m.beta[1]);
    }

    #[test]
    fn fit_rejects_eventless_data() {
        let mut ds = ph_dataset(30, &[0.5], 0.5, 0.0, 9);
        let records: Vec<_> = ds
            .records()
            .iter()
            .map(|r| {
                crate::data::SurvivalRecord::new(r.covariates.clone(), r.time, false).unwrap()
            })
            .collect();
        ds = SurvivalDataset::from_parts(records, vec!["x0".into()]).unwrap();
        assert!(cox_fit(&ds, 1e-6, 64).is_err());
    }

    #[test]
    fn zero_coefficients_predict_the_baseline_for_every_x() {
        let ds = ph_dataset(200, &[0.0, 0.0], 0.5, 0.3, 10);
        let model = CoxModel {
            beta: vec![0.0, 0.0],
            baseline: nelson_aalen(&ds.times(), &ds.events()).unwrap(),
            iterations: 0,
            final_gradient_norm: 0.0,
            tol: 1e-6,
            max_iter: 64,
        };
        let grid = model.native_grid().clone();
        let base = model.baseline.to_survival();
        for x in [[0.0, 0.0], [3.0, -2.0], [-5.0, 5.0]] {
            let curve = model.predict_survival(&x, &grid).unwrap();
            for (a, b) in curve.probabilities().iter().zip(base.probabilities()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn survival_at_time_zero_is_one() {
        let ds = ph_dataset(100, &[0.7], 0.5, 0.2, 11);
        let m = cox_fit(&ds, 1e-6, 64).unwrap();
        let grid = TimeGrid::new(vec![0.0, 1.0, 5.0]).unwrap();
        let curve = m.predict_survival(&[1.3], &grid).unwrap();
        assert_eq!(curve.probabilities()[0], 1.0);
        assert_eq!(m.predict_survival_at(&[1.3], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn curves_are_monotone_and_bounded_for_random_inputs() {
        let ds = ph_dataset(300, &[0.8, -0.6, 0.3], 0.4, 0.25, 12);
        let m = cox_fit(&ds, 1e-6, 64).unwrap();
        let grid = m.native_grid().clone();
        let mut rng = crate::seed::rng(13, "cox-mono", 0);
        for _ in 0..500 {
            let x: Vec<f64> = (0..3).map(|_| crate::seed::standard_normal(&mut rng) * 2.0).collect();
            // Constructor validates monotonicity and range.
            m.predict_survival(&x, &grid).unwrap();
        }
    }

    #[test]
    fn save_load_round_trip_preserves_predictions_bitwise() {
        let ds = ph_dataset(150, &[0.5, 0.5], 0.5, 0.2, 14);
        let m = cox_fit(&ds, 1e-6, 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cox.survmodel.json");
        crate::models::save_model(&crate::models::AnyModel::Cox(m.clone()), &path).unwrap();
        let loaded = crate::models::load_model(&path).unwrap();
        let grid = m.native_grid().clone();
        let x = [0.37, -1.2];
        let a = m.predict_survival(&x, &grid).unwrap();
        let b = loaded.predict_survival(&x, &grid).unwrap();
        for (pa, pb) in a.probabilities().iter().zip(b.probabilities()) {
            assert_eq!(pa.to_bits(), pb.to_bits());
        }
    }
}
