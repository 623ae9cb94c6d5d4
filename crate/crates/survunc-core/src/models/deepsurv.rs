//! MLP proportional-hazards model ("deep survival" style): a rectifier
//! network replaces the linear predictor, trained on the within-minibatch
//! negative log partial likelihood with dropout, Adam, and early stopping;
//! absolute curves come from a Breslow baseline at the final weights.

use serde::{Deserialize, Serialize};

use crate::data::{SurvivalCurve, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::estimators::{breslow_baseline, CumulativeHazard};
use crate::mlp::{
    cox_eta_loss_grad, cox_loss_and_grad, train_loop, DropoutMasks, Mlp, TrainReport,
    TrainSettings,
};
use crate::models::{check_dim, Capabilities, SurvivalModel};
use crate::seed;

/// Training configuration; learning rate, hidden widths, and dropout follow
/// the benchmark defaults, the optimizer-loop settings are our own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSurvConfig {
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
}

impl DeepSurvConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            lr: 0.01,
            hidden: vec![32],
            dropout: 0.1,
            epochs: 100,
            batch: 256,
            patience: 10,
            seed,
        }
    }
}

/// Fitted MLP hazard model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepSurvModel {
    pub mlp: Mlp,
    pub baseline: CumulativeHazard,
    pub config: DeepSurvConfig,
    pub report: TrainReport,
}

/// Fit the MLP hazard model. Minibatch risk sets are formed within each
/// batch; validation loss (full-batch, dropout off) drives early stopping;
/// eventless minibatches are skipped with a warning.
pub fn deepsurv_fit(
    train: &SurvivalDataset,
    val: &SurvivalDataset,
    config: &DeepSurvConfig,
) -> Result<DeepSurvModel> {
    if train.n_events() == 0 {
        return Err(SurvError::InvalidArgument(
            "cannot fit a hazard model on a dataset with zero events".into(),
        ));
    }
    if val.n_events() == 0 {
        return Err(SurvError::InvalidArgument(
            "validation set needs at least one event for early stopping".into(),
        ));
    }
    if val.d() != train.d() {
        return Err(SurvError::DimensionMismatch {
            expected: train.d(),
            got: val.d(),
        });
    }
    let mut mlp = Mlp::new(
        train.d(),
        &config.hidden,
        config.dropout,
        false,
        seed::derive(config.seed, "deepsurv-init", 0),
    )?;
    let settings = TrainSettings {
        lr: config.lr,
        epochs: config.epochs,
        batch: config.batch,
        patience: config.patience,
        seed: seed::derive(config.seed, "deepsurv-train", 0),
    };

    let val_xs: Vec<&[f64]> = val.records().iter().map(|r| r.covariates.as_slice()).collect();
    let val_times = val.times();
    let val_events = val.events();
    let dropout = config.dropout;
    let mask_root = seed::derive(config.seed, "deepsurv-dropout", 0);

    let report = train_loop(
        &mut mlp,
        train.n(),
        &settings,
        |m, batch, step| {
            let xs: Vec<&[f64]> = batch
                .iter()
                .map(|&i| train.record(i).covariates.as_slice())
                .collect();
            let times: Vec<f64> = batch.iter().map(|&i| train.record(i).time).collect();
            let events: Vec<bool> = batch.iter().map(|&i| train.record(i).event).collect();
            let masks: Option<Vec<DropoutMasks>> = if dropout > 0.0 {
                let mut rng = seed::rng(mask_root, "step", step);
                Some(
                    (0..batch.len())
                        .map(|_| DropoutMasks::sample(&m.layer_sizes, dropout, &mut rng))
                        .collect(),
                )
            } else {
                None
            };
            cox_loss_and_grad(m, &xs, &times, &events, masks.as_deref())
        },
        |m| {
            let eta: Vec<f64> = val_xs
                .iter()
                .map(|x| m.forward(x))
                .collect::<Result<_>>()?;
            Ok(cox_eta_loss_grad(&eta, &val_times, &val_events)?.0)
        },
    )?;

    let eta_train: Vec<f64> = train
        .records()
        .iter()
        .map(|r| mlp.forward(&r.covariates))
        .collect::<Result<_>>()?;
    let baseline = breslow_baseline(&train.times(), &train.events(), &eta_train)?;

    Ok(DeepSurvModel {
        mlp,
        baseline,
        config: config.clone(),
        report,
    })
}

impl DeepSurvModel {
    /// Deterministic linear predictor (dropout off).
    pub fn linear_predictor(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.mlp.input_dim(), x)?;
        self.mlp.forward(x)
    }

    /// Linear predictor under fixed dropout masks (one stochastic pass).
    pub fn linear_predictor_masked(&self, x: &[f64], masks: &DropoutMasks) -> Result<f64> {
        check_dim(self.mlp.input_dim(), x)?;
        self.mlp.forward_masked(x, masks)
    }

    fn survival_at_hazard(&self, h0: f64, eta: f64) -> f64 {
        if h0 == 0.0 {
            1.0
        } else {
            (-(h0 * eta.exp())).exp()
        }
    }

    /// Curve on `grid` for a given linear predictor.
    pub fn survival_from_linear_predictor(&self, eta: f64, grid: &TimeGrid) -> SurvivalCurve {
        let probs = grid
            .times()
            .iter()
            .map(|&t| self.survival_at_hazard(self.baseline.eval(t), eta))
            .collect();
        SurvivalCurve::new(grid.clone(), probs)
            .expect("proportional-hazards curves are monotone by construction")
    }
}

impl SurvivalModel for DeepSurvModel {
    fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_dropout: self.config.dropout > 0.0,
            supports_reseed: true,
        }
    }

    fn native_grid(&self) -> &TimeGrid {
        self.baseline.grid()
    }

    fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
        let eta = self.linear_predictor(x)?;
        Ok(self.survival_from_linear_predictor(eta, grid))
    }

    fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
        let eta = self.linear_predictor(x)?;
        Ok(self.survival_at_hazard(self.baseline.eval(t), eta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::test_support::ph_dataset;

    fn small_config(seed: u64) -> DeepSurvConfig {
        DeepSurvConfig {
            lr: 0.01,
            hidden: vec![16],
            dropout: 0.1,
            epochs: 30,
            batch: 64,
            patience: 8,
            seed,
        }
    }

    #[test]
    fn fixed_seed_reproduces_identical_weights() {
        let train = ph_dataset(300, &[1.0, -0.5], 0.4, 0.25, 60);
        let val = ph_dataset(80, &[1.0, -0.5], 0.4, 0.25, 61);
        let a = deepsurv_fit(&train, &val, &small_config(62)).unwrap();
        let b = deepsurv_fit(&train, &val, &small_config(62)).unwrap();
        assert_eq!(a.mlp, b.mlp);
        let c = deepsurv_fit(&train, &val, &small_config(63)).unwrap();
        assert_ne!(a.mlp, c.mlp);
    }

    #[test]
    fn inference_is_deterministic_and_stochastic_passes_differ() {
        let train = ph_dataset(300, &[1.0], 0.4, 0.2, 64);
        let val = ph_dataset(80, &[1.0], 0.4, 0.2, 65);
        let m = deepsurv_fit(&train, &val, &small_config(66)).unwrap();
        let x = [0.8];
        assert_eq!(
            m.linear_predictor(&x).unwrap(),
            m.linear_predictor(&x).unwrap()
        );
        // Across 100 stochastic passes, at least two must disagree.
        let mut etas = std::collections::BTreeSet::new();
        for pass in 0..100u64 {
            let mut rng = crate::seed::rng(67, "pass", pass);
            let masks = DropoutMasks::sample(&m.mlp.layer_sizes, m.config.dropout, &mut rng);
            let eta = m.linear_predictor_masked(&x, &masks).unwrap();
            etas.insert(eta.to_bits());
        }
        assert!(etas.len() > 1, "dropout passes never disagreed");
    }

    #[test]
    fn learns_risk_ordering_on_proportional_hazards_data() {
        let train = ph_dataset(1000, &[1.2, -0.8], 0.4, 0.2, 68);
        let val = ph_dataset(250, &[1.2, -0.8], 0.4, 0.2, 69);
        let m = deepsurv_fit(&train, &val, &small_config(70)).unwrap();
        // Higher true risk should mean lower predicted survival.
        let hi_risk = [2.0, -2.0];
        let lo_risk = [-2.0, 2.0];
        let t = 2.0;
        let s_hi = m.predict_survival_at(&hi_risk, t).unwrap();
        let s_lo = m.predict_survival_at(&lo_risk, t).unwrap();
        assert!(
            s_hi < s_lo,
            "high-risk survival {s_hi} not below low-risk {s_lo}"
        );
    }

    #[test]
    fn eventless_singleton_batches_are_skipped_not_fatal() {
        let train = ph_dataset(60, &[0.5], 0.5, 0.5, 71);
        assert!(train.n_events() < train.n(), "need censored records");
        let val = ph_dataset(30, &[0.5], 0.5, 0.2, 72);
        let config = DeepSurvConfig {
            batch: 1,
            epochs: 2,
            ..small_config(73)
        };
        let m = deepsurv_fit(&train, &val, &config).unwrap();
        assert!(m.report.skipped_batches > 0);
    }

    #[test]
    fn save_load_round_trip_preserves_predictions_bitwise() {
        let train = ph_dataset(200, &[0.9], 0.4, 0.2, 74);
        let val = ph_dataset(60, &[0.9], 0.4, 0.2, 75);
        let m = deepsurv_fit(&train, &val, &small_config(76)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.survmodel.json");
        crate::models::save_model(&crate::models::AnyModel::DeepSurv(m.clone()), &path).unwrap();
        let loaded = crate::models::load_model(&path).unwrap();
        let grid = m.native_grid().clone();
        let a = m.predict_survival(&[0.3], &grid).unwrap();
        let b = loaded.predict_survival(&[0.3], &grid).unwrap();
        for (pa, pb) in a.probabilities().iter().zip(b.probabilities()) {
            assert_eq!(pa.to_bits(), pb.to_bits());
        }
    }

    #[test]
    fn curves_are_monotone_and_bounded_for_random_inputs() {
        let train = ph_dataset(300, &[0.8, 0.1, -0.4], 0.4, 0.25, 77);
        let val = ph_dataset(80, &[0.8, 0.1, -0.4], 0.4, 0.25, 78);
        let m = deepsurv_fit(&train, &val, &small_config(79)).unwrap();
        let grid = m.native_grid().clone();
        let mut rng = crate::seed::rng(80, "ds-mono", 0);
        for _ in 0..300 {
            let x: Vec<f64> = (0..3)
                .map(|_| crate::seed::standard_normal(&mut rng) * 2.0)
                .collect();
            m.predict_survival(&x, &grid).unwrap();
        }
    }
}
