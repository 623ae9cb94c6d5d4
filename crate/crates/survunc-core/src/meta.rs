//! Anchor-based uncertainty meta-labels and the meta-models trained on them.
//!
//! The pipeline is post-hoc and model-agnostic: a fitted survival model is
//! only *queried* for survival probabilities, never modified. A set of
//! uncensored training records serves as anchors; each uncensored record
//! receives a label equal to the fraction of later-time anchors the model
//! ranks incorrectly against it, and a regressor (random forest or MLP) is
//! trained to predict that label from covariates alone. At inference the
//! regressor's output is the uncertainty score — event times are not needed.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Result, SurvError};
use crate::mlp::{mse_loss_and_grad, train_loop, Mlp, TrainReport, TrainSettings};
use crate::models::{load_envelope, save_envelope, SurvivalModel};
use crate::rf_regressor::{rf_regression_fit, RandomForestRegressor, RfRegressorConfig};
use crate::seed;

/// One anchor: an uncensored record's covariates and event time, plus its
/// row index in the dataset it was drawn from (kept for audit).
#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub index: usize,
    pub time: f64,
    pub covariates: Vec<f64>,
}

/// A set of anchors drawn from uncensored records.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn from_parts(anchors: Vec<Anchor>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(SurvError::InvalidArgument(
                "anchor set must contain at least one anchor".into(),
            ));
        }
        let d = anchors[0].covariates.len();
        for a in &anchors {
            if !a.time.is_finite() || a.time <= 0.0 {
                return Err(SurvError::InvalidArgument(format!(
                    "anchor {} has non-positive time {}",
                    a.index, a.time
                )));
            }
            if a.covariates.len() != d {
                return Err(SurvError::DimensionMismatch {
                    expected: d,
                    got: a.covariates.len(),
                });
            }
        }
        Ok(Self { anchors })
    }

    /// Build anchors from explicit row indices of `data` (all must be
    /// uncensored rows).
    pub fn from_indices(data: &SurvivalDataset, indices: &[usize]) -> Result<Self> {
        let anchors = indices
            .iter()
            .map(|&i| {
                if i >= data.n() {
                    return Err(SurvError::InvalidArgument(format!(
                        "anchor index {i} out of range (n={})",
                        data.n()
                    )));
                }
                let r = data.record(i);
                if !r.event {
                    return Err(SurvError::InvalidArgument(format!(
                        "anchor index {i} refers to a censored record"
                    )));
                }
                Ok(Anchor {
                    index: i,
                    time: r.time,
                    covariates: r.covariates.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(anchors)
    }

    pub fn k(&self) -> usize {
        self.anchors.len()
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].covariates.len()
    }
}

/// Draw `k` anchors uniformly without replacement from the uncensored
/// records of `train`. Deterministic for a fixed seed; the returned anchors
/// are sorted by row index (a canonical order for audit files).
///
/// With `stratified` set, the uncensored records are instead ranked by event
/// time, split into `k` equally sized rank bins, and one anchor is drawn
/// uniformly from each bin — spreading anchors across the time axis. The
/// default pipeline uses the uniform draw.
pub fn sample_anchors(
    train: &SurvivalDataset,
    k: usize,
    seed_value: u64,
    stratified: bool,
) -> Result<AnchorSet> {
    if k == 0 {
        return Err(SurvError::InvalidArgument(
            "anchor count must be at least 1".into(),
        ));
    }
    let uncensored = train.event_indices();
    if uncensored.len() < k {
        return Err(SurvError::InvalidArgument(format!(
            "only {} uncensored records available; choose an anchor count ≤ {}",
            uncensored.len(),
            uncensored.len()
        )));
    }
    let mut rng = seed::rng(seed_value, "anchors", 0);
    let mut picked: Vec<usize> = if stratified {
        let mut by_time: Vec<usize> = uncensored.clone();
        by_time.sort_by(|&a, &b| {
            train
                .record(a)
                .time
                .total_cmp(&train.record(b).time)
                .then(a.cmp(&b))
        });
        let m = by_time.len();
        (0..k)
            .map(|q| {
                let lo = q * m / k;
                let hi = (q + 1) * m / k;
                let at = rand::Rng::random_range(&mut rng, lo..hi);
                by_time[at]
            })
            .collect()
    } else {
        rand::seq::index::sample(&mut rng, uncensored.len(), k)
            .into_iter()
            .map(|i| uncensored[i])
            .collect()
    };
    picked.sort_unstable();
    AnchorSet::from_indices(train, &picked)
}

/// Uncertainty label for one uncensored sample `(x_j, t_j)` against the
/// anchor set: among anchors with a strictly later event time, the fraction
/// the model ranks incorrectly — `S(t_j|x_j) ≥ S(t_j|x^A_k)` counts as
/// incorrect, ties included, because the sample failed before the anchor and
/// so should have the strictly lower survival probability at `t_j`.
///
/// Returns `None` when no anchor time exceeds `t_j` (the label is undefined:
/// there is nothing to compare against).
pub fn compute_meta_label(
    x_j: &[f64],
    t_j: f64,
    anchors: &AnchorSet,
    model: &dyn SurvivalModel,
) -> Result<Option<f64>> {
    let mut denominator = 0usize;
    let mut numerator = 0usize;
    let mut s_j: Option<f64> = None; // computed lazily, once
    for a in anchors.anchors() {
        if t_j < a.time {
            denominator += 1;
            let s_j = match s_j {
                Some(v) => v,
                None => {
                    let v = model.predict_survival_at(x_j, t_j)?;
                    s_j = Some(v);
                    v
                }
            };
            let s_a = model.predict_survival_at(&a.covariates, t_j)?;
            if s_j >= s_a {
                numerator += 1;
            }
        }
    }
    if denominator == 0 {
        return Ok(None);
    }
    Ok(Some(numerator as f64 / denominator as f64))
}

/// Labeled training set for the meta-model: covariates paired with a label
/// in [0, 1], built from the uncensored records whose label is defined.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    xs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    excluded_censored: usize,
    excluded_undefined: usize,
}

impl MetaDataset {
    pub fn from_parts(xs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(SurvError::InvalidArgument(
                "meta dataset needs equally many rows and labels, at least one".into(),
            ));
        }
        if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(SurvError::InvalidArgument(format!(
                "meta label {l} outside [0, 1]"
            )));
        }
        Ok(Self {
            xs,
            labels,
            excluded_censored: 0,
            excluded_undefined: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.xs.len()
    }

    pub fn d(&self) -> usize {
        self.xs[0].len()
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Censored records (no label by definition).
    pub fn excluded_censored(&self) -> usize {
        self.excluded_censored
    }

    /// Uncensored records with no later-time anchor (label undefined).
    pub fn excluded_undefined(&self) -> usize {
        self.excluded_undefined
    }

    /// Total records that contributed no pair.
    pub fn excluded_count(&self) -> usize {
        self.excluded_censored + self.excluded_undefined
    }
}

/// Label every uncensored record of `data` against `anchors` using the
/// fitted `model` (queried read-only), keeping pairs in input order.
///
/// Censored records and records with an undefined label are excluded and
/// counted. Label computation is parallel over records; results are
/// order-stable regardless of thread count.
pub fn build_meta_dataset(
    data: &SurvivalDataset,
    anchors: &AnchorSet,
    model: &dyn SurvivalModel,
) -> Result<MetaDataset> {
    if anchors.dim() != data.d() {
        return Err(SurvError::DimensionMismatch {
            expected: data.d(),
            got: anchors.dim(),
        });
    }
    enum Row {
        Pair(Vec<f64>, f64),
        Censored,
        Undefined,
    }
    let rows: Vec<Row> = (0..data.n())
        .into_par_iter()
        .map(|j| {
            let r = data.record(j);
            if !r.event {
                return Ok(Row::Censored);
            }
            match compute_meta_label(&r.covariates, r.time, anchors, model)? {
                Some(label) => Ok(Row::Pair(r.covariates.clone(), label)),
                None => Ok(Row::Undefined),
            }
        })
        .collect::<Result<_>>()?;

    let mut xs = Vec::new();
    let mut labels = Vec::new();
    let mut excluded_censored = 0;
    let mut excluded_undefined = 0;
    for row in rows {
        match row {
            Row::Pair(x, label) => {
                debug_assert!((0.0..=1.0).contains(&label));
                xs.push(x);
                labels.push(label);
            }
            Row::Censored => excluded_censored += 1,
            Row::Undefined => excluded_undefined += 1,
        }
    }
    if xs.is_empty() {
        return Err(SurvError::InvalidArgument(
            "no record received a label: every record was censored or had no later-time anchor"
                .into(),
        ));
    }
    Ok(MetaDataset {
        xs,
        labels,
        excluded_censored,
        excluded_undefined,
    })
}

/// Which regressor the meta-model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaModelKind {
    Rf,
    Mlp,
}

impl std::str::FromStr for MetaModelKind {
    type Err = SurvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rf" => Ok(MetaModelKind::Rf),
            "mlp" => Ok(MetaModelKind::Mlp),
            other => Err(SurvError::InvalidArgument(format!(
                "unknown meta-model kind `{other}` (expected `rf` or `mlp`)"
            ))),
        }
    }
}

/// A fitted uncertainty meta-model; the unit persisted to `.metamodel.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetaModel {
    Rf {
        forest: RandomForestRegressor,
    },
    Mlp {
        net: Mlp,
        report: TrainReport,
    },
}

impl MetaModel {
    pub fn kind(&self) -> MetaModelKind {
        match self {
            MetaModel::Rf { .. } => MetaModelKind::Rf,
            MetaModel::Mlp { .. } => MetaModelKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetaModel::Rf { forest } => forest.dim(),
            MetaModel::Mlp { net, .. } => net.input_dim(),
        }
    }
}

/// Regressor defaults: the forest uses 100 trees with split/leaf minimums
/// 10/5 and all features per split; the network uses hidden layers [32, 32],
/// a sigmoid output, squared-error loss, and learning rate 0.001 with early
/// stopping on a 10% held-out slice of the meta dataset.
pub fn fit_meta(meta_ds: &MetaDataset, kind: MetaModelKind, seed_value: u64) -> Result<MetaModel> {
    match kind {
        MetaModelKind::Rf => {
            let config = RfRegressorConfig::with_seed(seed_value);
            let forest = rf_regression_fit(meta_ds.xs(), meta_ds.labels(), &config)?;
            Ok(MetaModel::Rf { forest })
        }
        MetaModelKind::Mlp => {
            let m = meta_ds.n();
            if m < 2 {
                return Err(SurvError::InvalidArgument(
                    "the network meta-model needs at least 2 labeled records (one is held out)"
                        .into(),
                ));
            }
            let mut order: Vec<usize> = (0..m).collect();
            let mut rng = seed::rng(seed_value, "meta-val-split", 0);
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            let n_val = (m / 10).max(1);
            let (fit_rows, val_rows) = order.split_at(m - n_val);
            let fit_rows = fit_rows.to_vec();
            let val_xs: Vec<&[f64]> = val_rows.iter().map(|&i| meta_ds.xs()[i].as_slice()).collect();
            let val_ys: Vec<f64> = val_rows.iter().map(|&i| meta_ds.labels()[i]).collect();

            let mut net = Mlp::new(meta_ds.d(), &[32, 32], 0.0, true, seed_value)?;
            // At the fixed learning rate 0.001, Adam moves parameters about
            // 0.001 per step, so the epoch budget must admit a few thousand
            // steps even on small meta datasets; early stopping keeps
            // well-behaved fits far shorter.
            let settings = TrainSettings {
                lr: 0.001,
                epochs: 1000,
                batch: 64,
                patience: 20,
                seed: seed_value,
            };
            let report = train_loop(
                &mut net,
                fit_rows.len(),
                &settings,
                |net, batch, _step| {
                    let xs: Vec<&[f64]> = batch
                        .iter()
                        .map(|&b| meta_ds.xs()[fit_rows[b]].as_slice())
                        .collect();
                    let ys: Vec<f64> =
                        batch.iter().map(|&b| meta_ds.labels()[fit_rows[b]]).collect();
                    mse_loss_and_grad(net, &xs, &ys, None).map(Some)
                },
                |net| {
                    let mut loss = 0.0;
                    for (x, y) in val_xs.iter().zip(&val_ys) {
                        let p = net.forward(x)?;
                        loss += (p - y) * (p - y);
                    }
                    Ok(loss / val_xs.len() as f64)
                },
            )?;
            Ok(MetaModel::Mlp { net, report })
        }
    }
}

/// Uncertainty score for covariates `x`, in [0, 1]. Higher means the base
/// model's prediction for `x` is less reliable.
pub fn score(meta: &MetaModel, x: &[f64]) -> Result<f64> {
    if x.len() != meta.dim() {
        return Err(SurvError::DimensionMismatch {
            expected: meta.dim(),
            got: x.len(),
        });
    }
    match meta {
        MetaModel::Rf { forest } => forest.predict(x),
        MetaModel::Mlp { net, .. } => net.forward(x),
    }
}

/// Score many rows (parallel, order-stable).
pub fn score_many(meta: &MetaModel, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    xs.par_iter().map(|x| score(meta, x)).collect()
}

const META_FORMAT: &str = "survunc-meta";
const META_VERSION: u32 = 1;

/// Write a meta-model to a versioned JSON file (`.metamodel.json`).
pub fn save_meta_model(meta: &MetaModel, path: impl AsRef<Path>) -> Result<()> {
    save_envelope(
        META_FORMAT,
        META_VERSION,
        serde_json::to_value(meta)?,
        path.as_ref(),
    )
}

/// Load a meta-model saved by [`save_meta_model`]; scores round-trip bitwise.
pub fn load_meta_model(path: impl AsRef<Path>) -> Result<MetaModel> {
    let value = load_envelope(META_FORMAT, META_VERSION, path.as_ref())?;
    Ok(serde_json::from_value(value)?)
}

const ANCHORS_FORMAT: &str = "survunc-anchors";
const ANCHORS_VERSION: u32 = 1;

/// Audit record of an anchor set: row indices and event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorAudit {
    pub indices: Vec<usize>,
    pub times: Vec<f64>,
}

/// Write the anchor set's indices and times for audit (`anchors.json`).
pub fn save_anchors(anchors: &AnchorSet, path: impl AsRef<Path>) -> Result<()> {
    let audit = AnchorAudit {
        indices: anchors.anchors().iter().map(|a| a.index).collect(),
        times: anchors.anchors().iter().map(|a| a.time).collect(),
    };
    save_envelope(
        ANCHORS_FORMAT,
        ANCHORS_VERSION,
        serde_json::to_value(&audit)?,
        path.as_ref(),
    )
}

/// Read an anchor audit file written by [`save_anchors`].
pub fn load_anchors(path: impl AsRef<Path>) -> Result<AnchorAudit> {
    let value = load_envelope(ANCHORS_FORMAT, ANCHORS_VERSION, path.as_ref())?;
    Ok(serde_json::from_value(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SurvivalCurve, SurvivalRecord, TimeGrid};
    use crate::models::test_support::ph_dataset;
    use crate::models::{cox_fit, Capabilities};

    /// Stub model: `S(t | x) = x[0]` for every `t` (a flat, valid survival
    /// curve), so tests can dictate survival probabilities directly.
    struct FlatModel {
        grid: TimeGrid,
        dim: usize,
    }

    impl FlatModel {
        fn new(dim: usize) -> Self {
            Self {
                grid: TimeGrid::new(vec![1.0]).unwrap(),
                dim,
            }
        }
    }

    impl SurvivalModel for FlatModel {
        fn dim(&self) -> usize {
            self.dim
        }

        fn capabilities(&self) -> Capabilities {
            Capabilities {
                supports_dropout: false,
                supports_reseed: false,
            }
        }

        fn native_grid(&self) -> &TimeGrid {
            &self.grid
        }

        fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
            SurvivalCurve::new(grid.clone(), vec![x[0]; grid.times().len()])
        }

        fn predict_survival_at(&self, x: &[f64], _t: f64) -> Result<f64> {
            Ok(x[0])
        }
    }

    /// Oracle model that is perfectly concordant by construction:
    /// `S(t | x) = exp(-t / x[0])` where `x[0]` is the record's own event
    /// time. For `t_j < t_k`, `exp(-t_j/t_j) < exp(-t_j/t_k)` always, so
    /// every comparable pair is correctly ordered.
    struct ConcordantOracle {
        grid: TimeGrid,
    }

    impl SurvivalModel for ConcordantOracle {
        fn dim(&self) -> usize {
            2
        }

        fn capabilities(&self) -> Capabilities {
            Capabilities {
                supports_dropout: false,
                supports_reseed: false,
            }
        }

        fn native_grid(&self) -> &TimeGrid {
            &self.grid
        }

        fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
            let values = grid.times().iter().map(|t| (-t / x[0]).exp()).collect();
            SurvivalCurve::new(grid.clone(), values)
        }

        fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
            Ok((-t / x[0]).exp())
        }
    }

    fn flat_anchors(specs: &[(f64, f64)]) -> AnchorSet {
        // (survival value, event time) pairs for the FlatModel.
        AnchorSet::from_parts(
            specs
                .iter()
                .enumerate()
                .map(|(i, &(s, t))| Anchor {
                    index: i,
                    time: t,
                    covariates: vec![s],
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_sampling_draws_k_distinct_uncensored_anchors() {
        let ds = ph_dataset(200, &[0.8, -0.5], 0.4, 0.4, 301);
        let k = 50;
        let anchors = sample_anchors(&ds, k, 7, false).unwrap();
        assert_eq!(anchors.k(), k);
        let mut seen = std::collections::HashSet::new();
        for a in anchors.anchors() {
            assert!(seen.insert(a.index), "duplicate anchor index {}", a.index);
            let r = ds.record(a.index);
            assert!(r.event, "anchor {} is censored", a.index);
            assert_eq!(a.time, r.time);
            assert_eq!(a.covariates, r.covariates);
        }
        let again = sample_anchors(&ds, k, 7, false).unwrap();
        assert_eq!(anchors, again, "same seed must give the same anchors");
        let other = sample_anchors(&ds, k, 8, false).unwrap();
        assert_ne!(anchors, other, "different seed should give different anchors");
    }

    #[test]
    fn single_anchor_and_too_few_uncensored() {
        let ds = ph_dataset(40, &[0.5], 0.4, 0.5, 302);
        let one = sample_anchors(&ds, 1, 3, false).unwrap();
        assert_eq!(one.k(), 1);
        let n_unc = ds.n_events();
        let err = sample_anchors(&ds, n_unc + 1, 3, false).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains(&format!("≤ {n_unc}")),
            "error should suggest a smaller anchor count: {msg}"
        );
        assert!(sample_anchors(&ds, 0, 3, false).is_err());
    }

    #[test]
    fn stratified_sampling_covers_every_time_quantile_bin() {
        let ds = ph_dataset(200, &[0.8, -0.5], 0.4, 0.3, 303);
        let k = 10;
        let anchors = sample_anchors(&ds, k, 11, true).unwrap();
        assert_eq!(anchors.k(), k);
        // Each anchor must come from its own rank bin of the uncensored
        // times: reconstruct the bins and check membership.
        let unc = ds.event_indices();
        let mut by_time: Vec<usize> = unc.clone();
        by_time.sort_by(|&a, &b| {
            ds.record(a)
                .time
                .total_cmp(&ds.record(b).time)
                .then(a.cmp(&b))
        });
        let m = by_time.len();
        let mut sorted_anchor_times: Vec<f64> =
            anchors.anchors().iter().map(|a| a.time).collect();
        sorted_anchor_times.sort_by(f64::total_cmp);
        for (q, t) in sorted_anchor_times.iter().enumerate() {
            let lo_t = ds.record(by_time[q * m / k]).time;
            let hi_t = ds.record(by_time[(q + 1) * m / k - 1]).time;
            assert!(
                (lo_t..=hi_t).contains(t),
                "anchor time {t} outside bin {q} [{lo_t}, {hi_t}]"
            );
        }
        let again = sample_anchors(&ds, k, 11, true).unwrap();
        assert_eq!(anchors, again);
    }

    #[test]
    fn hand_worked_label_is_one_half() {
        // Anchors at times 5 and 10 with model survival 0.8 and 0.95; the
        // sample at t=3 has survival 0.9. Both anchors are later-time, the
        // first is mis-ordered (0.9 ≥ 0.8), the second is not (0.9 < 0.95).
        let model = FlatModel::new(1);
        let anchors = flat_anchors(&[(0.8, 5.0), (0.95, 10.0)]);
        let label = compute_meta_label(&[0.9], 3.0, &anchors, &model).unwrap();
        assert_eq!(label, Some(0.5));
    }

    #[test]
    fn tie_in_survival_counts_as_incorrect() {
        let model = FlatModel::new(1);
        let anchors = flat_anchors(&[(0.9, 5.0)]);
        let label = compute_meta_label(&[0.9], 3.0, &anchors, &model).unwrap();
        assert_eq!(label, Some(1.0));
    }

    #[test]
    fn no_later_anchor_means_undefined() {
        let model = FlatModel::new(1);
        let anchors = flat_anchors(&[(0.8, 5.0), (0.95, 10.0)]);
        // Strictly later than every anchor.
        assert_eq!(
            compute_meta_label(&[0.5], 11.0, &anchors, &model).unwrap(),
            None
        );
        // Equal to the max anchor time: `t_j < t_k` is false for both.
        assert_eq!(
            compute_meta_label(&[0.5], 10.0, &anchors, &model).unwrap(),
            None
        );
    }

    #[test]
    fn perfectly_concordant_model_gets_all_zero_labels() {
        // Records carry their own event time in x[0]; the oracle reads it.
        let mut rng = seed::rng(304, "meta-oracle", 0);
        let mut records = Vec::new();
        for i in 0..60 {
            let t = 1.0 + 99.0 * rand::Rng::random::<f64>(&mut rng);
            let censored = i % 5 == 0;
            records.push(
                SurvivalRecord::new(
                    vec![t, seed::standard_normal(&mut rng)],
                    t,
                    !censored,
                )
                .unwrap(),
            );
        }
        let ds = SurvivalDataset::from_parts(records, vec!["t".into(), "z".into()]).unwrap();
        let model = ConcordantOracle {
            grid: TimeGrid::new(vec![1.0]).unwrap(),
        };
        let anchors = sample_anchors(&ds, 30, 9, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        assert!(meta_ds.labels().iter().all(|&l| l == 0.0));

        // Exclusions: every censored record, plus the uncensored records at
        // or beyond the latest anchor time.
        let max_anchor_time = anchors
            .anchors()
            .iter()
            .map(|a| a.time)
            .fold(f64::NEG_INFINITY, f64::max);
        let censored = ds.n() - ds.n_events();
        let undefined = ds
            .records()
            .iter()
            .filter(|r| r.event && r.time >= max_anchor_time)
            .count();
        assert_eq!(meta_ds.excluded_censored(), censored);
        assert_eq!(meta_ds.excluded_undefined(), undefined);
        assert_eq!(meta_ds.n() + meta_ds.excluded_count(), ds.n());
    }

    #[test]
    fn build_counts_censored_and_undefined_exclusions() {
        // 4 uncensored + 2 censored records; anchors (from elsewhere) are at
        // much later times, so all 4 labels are defined.
        let records = vec![
            SurvivalRecord::new(vec![0.9], 1.0, true).unwrap(),
            SurvivalRecord::new(vec![0.8], 2.0, true).unwrap(),
            SurvivalRecord::new(vec![0.7], 3.0, false).unwrap(),
            SurvivalRecord::new(vec![0.6], 4.0, true).unwrap(),
            SurvivalRecord::new(vec![0.5], 5.0, false).unwrap(),
            SurvivalRecord::new(vec![0.4], 6.0, true).unwrap(),
        ];
        let ds = SurvivalDataset::from_parts(records, vec!["s".into()]).unwrap();
        let model = FlatModel::new(1);
        let anchors = flat_anchors(&[(0.3, 100.0), (0.99, 200.0)]);
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        assert_eq!(meta_ds.n(), 4);
        assert_eq!(meta_ds.excluded_censored(), 2);
        assert_eq!(meta_ds.excluded_undefined(), 0);
        assert_eq!(meta_ds.excluded_count(), 2);
        // Pairs stay in input order: covariates are the uncensored rows.
        let xs: Vec<f64> = meta_ds.xs().iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.9, 0.8, 0.6, 0.4]);
        // FlatModel survival of each sample vs anchors 0.3 and 0.99: one of
        // two anchors mis-ordered for every sample above 0.3.
        assert!(meta_ds.labels().iter().all(|&l| l == 0.5));
    }

    #[test]
    fn brute_force_agreement_on_random_cases() {
        // Independent reimplementation: literal double loop over anchors,
        // no lazy evaluation, no early exits.
        fn brute_force(
            x_j: &[f64],
            t_j: f64,
            anchors: &AnchorSet,
            model: &dyn SurvivalModel,
        ) -> Option<f64> {
            let mut num = 0u32;
            let mut den = 0u32;
            for a in anchors.anchors() {
                if t_j < a.time {
                    den += 1;
                }
            }
            for a in anchors.anchors() {
                if t_j < a.time {
                    let s_j = model.predict_survival_at(x_j, t_j).unwrap();
                    let s_a = model.predict_survival_at(&a.covariates, t_j).unwrap();
                    if s_j >= s_a {
                        num += 1;
                    }
                }
            }
            if den == 0 {
                None
            } else {
                Some(num as f64 / den as f64)
            }
        }

        let ds = ph_dataset(120, &[1.0, -0.7, 0.3], 0.4, 0.25, 305);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let mut rng = seed::rng(306, "meta-fuzz", 0);
        let mut defined = 0;
        let mut undefined = 0;
        for case in 0..500 {
            let k = 1 + rand::Rng::random_range(&mut rng, 0..20);
            let k = k.min(ds.n_events());
            let anchors = sample_anchors(&ds, k, 1000 + case, false).unwrap();
            let j = rand::Rng::random_range(&mut rng, 0..ds.n());
            let r = ds.record(j);
            if !r.event {
                continue;
            }
            let got = compute_meta_label(&r.covariates, r.time, &anchors, &model).unwrap();
            let want = brute_force(&r.covariates, r.time, &anchors, &model);
            assert_eq!(got, want, "case {case}");
            match got {
                Some(l) => {
                    assert!((0.0..=1.0).contains(&l));
                    defined += 1;
                }
                None => undefined += 1,
            }
        }
        assert!(defined > 100, "fuzz should exercise defined labels");
        assert!(undefined > 0, "fuzz should exercise undefined labels");
    }

    #[test]
    fn meta_labeling_never_mutates_the_base_model() {
        let ds = ph_dataset(150, &[0.9, -0.4], 0.4, 0.3, 307);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let before = serde_json::to_string(&model).unwrap();
        let anchors = sample_anchors(&ds, 40, 13, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        let _rf = fit_meta(&meta_ds, MetaModelKind::Rf, 21).unwrap();
        let _mlp = fit_meta(&meta_ds, MetaModelKind::Mlp, 22).unwrap();
        let after = serde_json::to_string(&model).unwrap();
        assert_eq!(before, after, "base model changed during meta fitting");
    }

    #[test]
    fn build_is_parallel_schedule_independent() {
        let ds = ph_dataset(150, &[0.9, -0.4], 0.4, 0.3, 308);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let anchors = sample_anchors(&ds, 30, 14, false).unwrap();
        let a = build_meta_dataset(&ds, &anchors, &model).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| build_meta_dataset(&ds, &anchors, &model).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn constant_labels_reproduced_by_both_meta_models() {
        let ds = ph_dataset(120, &[0.5, 0.5], 0.4, 0.0, 309);
        let xs: Vec<Vec<f64>> = ds.records().iter().map(|r| r.covariates.clone()).collect();
        let labels = vec![0.25; xs.len()];
        let meta_ds = MetaDataset::from_parts(xs.clone(), labels).unwrap();
        let rf = fit_meta(&meta_ds, MetaModelKind::Rf, 31).unwrap();
        let mlp = fit_meta(&meta_ds, MetaModelKind::Mlp, 32).unwrap();
        for x in &xs {
            assert_eq!(score(&rf, x).unwrap(), 0.25);
            assert!((score(&mlp, x).unwrap() - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn rf_training_mse_beats_label_variance() {
        let ds = ph_dataset(200, &[1.2, -0.8], 0.4, 0.3, 310);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let anchors = sample_anchors(&ds, 50, 15, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        let rf = fit_meta(&meta_ds, MetaModelKind::Rf, 33).unwrap();
        let mean = meta_ds.labels().iter().sum::<f64>() / meta_ds.n() as f64;
        let var = meta_ds
            .labels()
            .iter()
            .map(|l| (l - mean) * (l - mean))
            .sum::<f64>()
            / meta_ds.n() as f64;
        let mse = meta_ds
            .xs()
            .iter()
            .zip(meta_ds.labels())
            .map(|(x, y)| {
                let p = score(&rf, x).unwrap();
                (p - y) * (p - y)
            })
            .sum::<f64>()
            / meta_ds.n() as f64;
        assert!(mse <= var, "training mse {mse} vs label variance {var}");
    }

    #[test]
    fn scores_are_bounded_deterministic_and_dimension_checked() {
        let ds = ph_dataset(150, &[0.9, -0.4], 0.4, 0.3, 311);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let anchors = sample_anchors(&ds, 40, 16, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        for kind in [MetaModelKind::Rf, MetaModelKind::Mlp] {
            let meta = fit_meta(&meta_ds, kind, 41).unwrap();
            let mut rng = seed::rng(42, "meta-range", 0);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..2)
                    .map(|_| seed::standard_normal(&mut rng) * 4.0)
                    .collect();
                let u = score(&meta, &x).unwrap();
                assert!((0.0..=1.0).contains(&u), "score {u} out of range");
                assert_eq!(score(&meta, &x).unwrap(), u);
            }
            assert!(matches!(
                score(&meta, &[0.0]),
                Err(SurvError::DimensionMismatch { expected: 2, got: 1 })
            ));
        }
    }

    #[test]
    fn score_many_matches_individual_scores() {
        let ds = ph_dataset(100, &[0.9, -0.4], 0.4, 0.3, 312);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let anchors = sample_anchors(&ds, 30, 17, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        let meta = fit_meta(&meta_ds, MetaModelKind::Rf, 43).unwrap();
        let xs: Vec<Vec<f64>> = ds.records().iter().map(|r| r.covariates.clone()).collect();
        let batch = score_many(&meta, &xs).unwrap();
        for (x, b) in xs.iter().zip(&batch) {
            assert_eq!(score(&meta, x).unwrap(), *b);
        }
    }

    #[test]
    fn meta_model_round_trip_is_bitwise_and_rejects_bad_envelopes() {
        let ds = ph_dataset(120, &[0.9, -0.4], 0.4, 0.3, 313);
        let model = cox_fit(&ds, 1e-9, 100).unwrap();
        let anchors = sample_anchors(&ds, 30, 18, false).unwrap();
        let meta_ds = build_meta_dataset(&ds, &anchors, &model).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for (kind, seed_value) in [(MetaModelKind::Rf, 51), (MetaModelKind::Mlp, 52)] {
            let meta = fit_meta(&meta_ds, kind, seed_value).unwrap();
            let path = dir.path().join(format!("{kind:?}.metamodel.json"));
            save_meta_model(&meta, &path).unwrap();
            let back = load_meta_model(&path).unwrap();
            assert_eq!(meta, back);
            let mut rng = seed::rng(53, "meta-rt", 0);
            for _ in 0..50 {
                let x: Vec<f64> = (0..2).map(|_| seed::standard_normal(&mut rng)).collect();
                assert_eq!(
                    score(&meta, &x).unwrap().to_bits(),
                    score(&back, &x).unwrap().to_bits()
                );
            }
        }
        // A base-model file is not a meta-model file.
        let base_path = dir.path().join("base.survmodel.json");
        crate::models::save_model(&crate::models::AnyModel::Cox(model), &base_path).unwrap();
        assert!(load_meta_model(&base_path).is_err());
    }

    #[test]
    fn anchor_audit_round_trips() {
        let ds = ph_dataset(100, &[0.9, -0.4], 0.4, 0.3, 314);
        let anchors = sample_anchors(&ds, 25, 19, false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        save_anchors(&anchors, &path).unwrap();
        let audit = load_anchors(&path).unwrap();
        assert_eq!(audit.indices.len(), 25);
        for (i, (&idx, &t)) in audit.indices.iter().zip(&audit.times).enumerate() {
            assert_eq!(anchors.anchors()[i].index, idx);
            assert_eq!(anchors.anchors()[i].time.to_bits(), t.to_bits());
            assert_eq!(ds.record(idx).time.to_bits(), t.to_bits());
        }
        // Anchors can be rebuilt from the audit indices.
        let rebuilt = AnchorSet::from_indices(&ds, &audit.indices).unwrap();
        assert_eq!(&rebuilt, &anchors);
        assert!(load_anchors(dir.path().join("missing.json")).is_err());
    }
}
