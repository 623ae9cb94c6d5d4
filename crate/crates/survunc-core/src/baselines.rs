//! Baseline uncertainty quantifiers: deep ensembles and MC-dropout.
//!
//! Both reduce a bundle of survival curves for the same subject — one per
//! ensemble member or per stochastic forward pass — to a scalar spread. The
//! primary aggregation is the maximum over grid times of the population
//! standard deviation of `S(t|x)`; mean-stddev and mean pairwise Euclidean
//! distance are available as ablation alternates.

use rayon::prelude::*;

use crate::data::{SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::mlp::DropoutMasks;
use crate::models::{AnyModel, SurvivalModel};
use crate::seed;

/// Members trained by the ensemble baseline.
pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

/// Stochastic forward passes used by the MC-dropout baseline.
pub const DEFAULT_MC_PASSES: usize = 100;

/// How a bundle of curves collapses to one uncertainty score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Maximum over grid times of the population stddev across curves.
    #[default]
    MaxStd,
    /// Mean over grid times of the population stddev across curves.
    MeanStd,
    /// Mean Euclidean distance between curve pairs (all unordered pairs).
    MeanEuclidean,
}

impl std::str::FromStr for Aggregation {
    type Err = SurvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-std" => Ok(Aggregation::MaxStd),
            "mean-std" => Ok(Aggregation::MeanStd),
            "mean-euclidean" => Ok(Aggregation::MeanEuclidean),
            other => Err(SurvError::InvalidArgument(format!(
                "unknown aggregation `{other}` (expected `max-std`, `mean-std`, or `mean-euclidean`)"
            ))),
        }
    }
}

/// Spread of `curves` (each a survival curve sampled on the same grid).
///
/// Symmetric in the curves and in the grid columns; exactly 0 when all
/// curves are identical.
pub fn curve_spread(curves: &[Vec<f64>], aggregation: Aggregation) -> Result<f64> {
    if curves.len() < 2 {
        return Err(SurvError::InvalidArgument(
            "curve spread needs at least two curves".into(),
        ));
    }
    let t = curves[0].len();
    if curves.iter().any(|c| c.len() != t) {
        return Err(SurvError::InvalidArgument(
            "curves must share one evaluation grid".into(),
        ));
    }
    if t == 0 {
        return Err(SurvError::InvalidArgument("empty evaluation grid".into()));
    }
    let m = curves.len() as f64;
    match aggregation {
        Aggregation::MaxStd | Aggregation::MeanStd => {
            let mut acc: f64 = 0.0;
            let mut max: f64 = 0.0;
            for j in 0..t {
                // A column of identical values has zero variance by
                // definition; skip the mean round-trip that would
                // manufacture ~1e-16 of spread.
                if curves[1..].iter().all(|c| c[j] == curves[0][j]) {
                    continue;
                }
                let mean = curves.iter().map(|c| c[j]).sum::<f64>() / m;
                let var = curves
                    .iter()
                    .map(|c| {
                        let z = c[j] - mean;
                        z * z
                    })
                    .sum::<f64>()
                    / m;
                let std = var.sqrt();
                acc += std;
                max = max.max(std);
            }
            Ok(match aggregation {
                Aggregation::MaxStd => max,
                _ => acc / t as f64,
            })
        }
        Aggregation::MeanEuclidean => {
            let mut acc = 0.0;
            let mut pairs = 0usize;
            for (i, a) in curves.iter().enumerate() {
                for b in &curves[i + 1..] {
                    let dist2: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(x, y)| {
                            let z = x - y;
                            z * z
                        })
                        .sum();
                    acc += dist2.sqrt();
                    pairs += 1;
                }
            }
            Ok(acc / pairs as f64)
        }
    }
}

/// An ensemble of base models sharing data and configuration, differing
/// only in training seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnsembleUq {
    members: Vec<AnyModel>,
}

impl EnsembleUq {
    pub fn from_members(members: Vec<AnyModel>) -> Result<Self> {
        if members.len() < 2 {
            return Err(SurvError::InvalidArgument(
                "an ensemble needs at least 2 members".into(),
            ));
        }
        let d = members[0].dim();
        if members.iter().any(|m| m.dim() != d) {
            return Err(SurvError::DimensionMismatch {
                expected: d,
                got: members.iter().map(|m| m.dim()).find(|&x| x != d).unwrap(),
            });
        }
        Ok(Self { members })
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[AnyModel] {
        &self.members
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }
}

/// Train `m` ensemble members by refitting `template` on `train` with
/// member seeds derived from `seed_value`. Members train in parallel and the
/// result is independent of thread schedule.
///
/// A template whose fit is deterministic (the linear hazard model) produces
/// identical members — the ensemble is well-defined but its spread is always
/// 0; a warning is logged.
pub fn ensemble_fit(
    train: &SurvivalDataset,
    val: Option<&SurvivalDataset>,
    template: &AnyModel,
    m: usize,
    seed_value: u64,
) -> Result<EnsembleUq> {
    if m < 2 {
        return Err(SurvError::InvalidArgument(
            "an ensemble needs at least 2 members".into(),
        ));
    }
    if !template.capabilities().supports_reseed {
        log::warn!(
            "{} fits deterministically: ensemble members will be identical and every spread 0",
            template.kind_name()
        );
    }
    let members: Vec<AnyModel> = (0..m)
        .into_par_iter()
        .map(|i| template.refit(train, val, seed::derive(seed_value, "ensemble-member", i as u64)))
        .collect::<Result<_>>()?;
    EnsembleUq::from_members(members)
}

/// Ensemble uncertainty for `x`: spread of the member survival curves on
/// `grid`.
pub fn ensemble_score(
    ens: &EnsembleUq,
    x: &[f64],
    grid: &TimeGrid,
    aggregation: Aggregation,
) -> Result<f64> {
    let curves: Vec<Vec<f64>> = ens
        .members
        .iter()
        .map(|m| Ok(m.predict_survival(x, grid)?.probabilities().to_vec()))
        .collect::<Result<_>>()?;
    curve_spread(&curves, aggregation)
}

/// MC-dropout uncertainty for `x`: spread of `passes` stochastic forward
/// predictions with dropout active.
///
/// Pass `p` uses the dropout masks drawn from the stream
/// `(seed_value, "mc-pass", p)`, so a fixed seed reproduces the score
/// exactly, and scoring many subjects with one seed applies the same mask
/// sequence to each of them.
///
/// Only the MLP hazard model has dropout layers; the linear hazard model and
/// the survival forest are rejected with a capability error. A dropout rate
/// of 0 is allowed and yields identical passes, hence score 0.
pub fn mc_dropout_score(
    model: &AnyModel,
    x: &[f64],
    grid: &TimeGrid,
    passes: usize,
    seed_value: u64,
    aggregation: Aggregation,
) -> Result<f64> {
    let AnyModel::DeepSurv(net) = model else {
        return Err(SurvError::Unsupported(format!(
            "MC-dropout needs a model with dropout layers; `{}` has none",
            model.kind_name()
        )));
    };
    if passes < 2 {
        return Err(SurvError::InvalidArgument(
            "MC-dropout needs at least 2 passes".into(),
        ));
    }
    if net.config.dropout == 0.0 {
        log::warn!("dropout rate is 0: all passes are identical and the score is 0");
    }
    let curves: Vec<Vec<f64>> = (0..passes)
        .into_par_iter()
        .map(|p| {
            let mut rng = seed::rng(seed_value, "mc-pass", p as u64);
            let masks = DropoutMasks::sample(&net.mlp.layer_sizes, net.config.dropout, &mut rng);
            let eta = net.linear_predictor_masked(x, &masks)?;
            Ok(net
                .survival_from_linear_predictor(eta, grid)
                .probabilities()
                .to_vec())
        })
        .collect::<Result<_>>()?;
    curve_spread(&curves, aggregation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::ph_dataset;
    use crate::models::{cox_fit, deepsurv_fit, DeepSurvConfig};

    fn split_ds(
        n: usize,
        seed_value: u64,
    ) -> (SurvivalDataset, SurvivalDataset) {
        let ds = ph_dataset(n, &[1.0, -0.6], 0.4, 0.2, seed_value);
        let idx: Vec<usize> = (0..ds.n()).collect();
        let (tr, va) = idx.split_at(ds.n() * 4 / 5);
        (ds.subset(tr), ds.subset(va))
    }

    #[test]
    fn spread_of_identical_curves_is_exactly_zero() {
        let c = vec![0.9, 0.7, 0.4, 0.1];
        for agg in [
            Aggregation::MaxStd,
            Aggregation::MeanStd,
            Aggregation::MeanEuclidean,
        ] {
            assert_eq!(curve_spread(&[c.clone(), c.clone(), c.clone()], agg).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_member_hand_example_gives_stddev_point_three() {
        // Curves equal everywhere except one time with S = 0.2 vs 0.8:
        // population stddev of {0.2, 0.8} is 0.3 and it is the max over
        // times, so the score is 0.3.
        let a = vec![0.9, 0.2, 0.1];
        let b = vec![0.9, 0.8, 0.1];
        let got = curve_spread(&[a.clone(), b.clone()], Aggregation::MaxStd).unwrap();
        assert!((got - 0.3).abs() < 1e-15, "got {got}");
        // Mean-std alternate averages over the three times: (0 + 0.3 + 0)/3.
        let mean = curve_spread(&[a.clone(), b.clone()], Aggregation::MeanStd).unwrap();
        assert!((mean - 0.1).abs() < 1e-15, "got {mean}");
        // Mean-Euclidean alternate: one pair at distance 0.6.
        let euc = curve_spread(&[a, b], Aggregation::MeanEuclidean).unwrap();
        assert!((euc - 0.6).abs() < 1e-15, "got {euc}");
    }

    #[test]
    fn spread_is_invariant_to_grid_column_order() {
        let curves = vec![
            vec![0.95, 0.6, 0.3, 0.05],
            vec![0.90, 0.7, 0.2, 0.10],
            vec![0.85, 0.5, 0.25, 0.02],
        ];
        let permuted: Vec<Vec<f64>> = curves
            .iter()
            .map(|c| vec![c[2], c[0], c[3], c[1]])
            .collect();
        for agg in [
            Aggregation::MaxStd,
            Aggregation::MeanStd,
            Aggregation::MeanEuclidean,
        ] {
            assert_eq!(
                curve_spread(&curves, agg).unwrap(),
                curve_spread(&permuted, agg).unwrap()
            );
        }
    }

    #[test]
    fn duplicated_model_ensemble_scores_exactly_zero() {
        let (train, _) = split_ds(120, 401);
        let model = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        let ens = EnsembleUq::from_members(vec![model.clone(), model.clone()]).unwrap();
        let grid = model.native_grid().clone();
        let mut rng = seed::rng(402, "ens-dup", 0);
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| seed::standard_normal(&mut rng)).collect();
            assert_eq!(
                ensemble_score(&ens, &x, &grid, Aggregation::MaxStd).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn deterministic_template_yields_identical_members_and_zero_scores() {
        let (train, _) = split_ds(120, 403);
        let template = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        let ens = ensemble_fit(&train, None, &template, 4, 5).unwrap();
        assert_eq!(ens.m(), 4);
        for m in ens.members() {
            assert_eq!(m, &ens.members()[0]);
        }
        let grid = template.native_grid().clone();
        let x = train.record(0).covariates.clone();
        assert_eq!(
            ensemble_score(&ens, &x, &grid, Aggregation::MaxStd).unwrap(),
            0.0
        );
    }

    #[test]
    fn reseedable_ensemble_members_differ_and_spread_is_positive() {
        let (train, val) = split_ds(150, 405);
        let config = DeepSurvConfig {
            epochs: 15,
            ..DeepSurvConfig::with_seed(1)
        };
        let template = AnyModel::DeepSurv(deepsurv_fit(&train, &val, &config).unwrap());
        let ens = ensemble_fit(&train, Some(&val), &template, 3, 6).unwrap();
        let grid = template.native_grid().clone();
        let x = train.record(0).covariates.clone();
        let score = ensemble_score(&ens, &x, &grid, Aggregation::MaxStd).unwrap();
        assert!(score > 0.0, "independently seeded nets should disagree");
        assert_ne!(ens.members()[0], ens.members()[1]);

        // Deterministic and schedule-independent.
        let again = ensemble_fit(&train, Some(&val), &template, 3, 6).unwrap();
        assert_eq!(ens, again);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let single = pool
            .install(|| ensemble_fit(&train, Some(&val), &template, 3, 6))
            .unwrap();
        assert_eq!(ens, single);
    }

    #[test]
    fn ensemble_needs_two_members() {
        let (train, _) = split_ds(100, 407);
        let template = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        assert!(ensemble_fit(&train, None, &template, 1, 5).is_err());
        assert!(EnsembleUq::from_members(vec![template]).is_err());
    }

    #[test]
    fn mc_dropout_rejects_models_without_dropout_layers() {
        let (train, _) = split_ds(120, 408);
        let cox = AnyModel::Cox(cox_fit(&train, 1e-9, 100).unwrap());
        let grid = cox.native_grid().clone();
        let x = train.record(0).covariates.clone();
        let err = mc_dropout_score(&cox, &x, &grid, 100, 1, Aggregation::MaxStd).unwrap_err();
        assert!(matches!(err, SurvError::Unsupported(_)), "{err}");

        let rsf_config = crate::models::RsfConfig {
            n_estimators: 10,
            ..crate::models::RsfConfig::with_seed(2)
        };
        let rsf = AnyModel::Rsf(crate::models::rsf_fit(&train, &rsf_config).unwrap());
        let err = mc_dropout_score(&rsf, &x, &grid, 100, 1, Aggregation::MaxStd).unwrap_err();
        assert!(matches!(err, SurvError::Unsupported(_)), "{err}");
    }

    #[test]
    fn zero_dropout_rate_scores_zero() {
        let (train, val) = split_ds(120, 409);
        let config = DeepSurvConfig {
            dropout: 0.0,
            epochs: 10,
            ..DeepSurvConfig::with_seed(3)
        };
        let net = AnyModel::DeepSurv(deepsurv_fit(&train, &val, &config).unwrap());
        let grid = net.native_grid().clone();
        let x = train.record(0).covariates.clone();
        assert_eq!(
            mc_dropout_score(&net, &x, &grid, 50, 4, Aggregation::MaxStd).unwrap(),
            0.0
        );
    }

    #[test]
    fn mc_dropout_is_seed_reproducible_and_positive_with_dropout() {
        let (train, val) = split_ds(150, 410);
        let config = DeepSurvConfig {
            epochs: 15,
            ..DeepSurvConfig::with_seed(5)
        };
        let net = AnyModel::DeepSurv(deepsurv_fit(&train, &val, &config).unwrap());
        assert!(net.capabilities().supports_dropout);
        let grid = net.native_grid().clone();
        let x = train.record(0).covariates.clone();
        let a = mc_dropout_score(&net, &x, &grid, 100, 7, Aggregation::MaxStd).unwrap();
        let b = mc_dropout_score(&net, &x, &grid, 100, 7, Aggregation::MaxStd).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
        let c = mc_dropout_score(&net, &x, &grid, 100, 8, Aggregation::MaxStd).unwrap();
        assert_ne!(a, c, "a different seed should sample different masks");

        // Schedule independence of the parallel passes.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let single = pool
            .install(|| mc_dropout_score(&net, &x, &grid, 100, 7, Aggregation::MaxStd))
            .unwrap();
        assert_eq!(a, single);
    }

    #[test]
    fn scores_are_nonnegative_for_random_subjects() {
        let (train, val) = split_ds(150, 411);
        let config = DeepSurvConfig {
            epochs: 15,
            ..DeepSurvConfig::with_seed(9)
        };
        let net = AnyModel::DeepSurv(deepsurv_fit(&train, &val, &config).unwrap());
        let ens = ensemble_fit(&train, Some(&val), &net, 3, 10).unwrap();
        let grid = net.native_grid().clone();
        let mut rng = seed::rng(412, "base-range", 0);
        for _ in 0..25 {
            let x: Vec<f64> = (0..2)
                .map(|_| seed::standard_normal(&mut rng) * 2.0)
                .collect();
            for agg in [
                Aggregation::MaxStd,
                Aggregation::MeanStd,
                Aggregation::MeanEuclidean,
            ] {
                assert!(ensemble_score(&ens, &x, &grid, agg).unwrap() >= 0.0);
                assert!(mc_dropout_score(&net, &x, &grid, 20, 11, agg).unwrap() >= 0.0);
            }
        }
    }
}
