//! Random-forest regressor: CART trees with variance-reduction splitting and
//! a bootstrap sample per tree.
//!
//! Predictions average the routed leaf means, so they always lie inside the
//! convex hull of the training labels — labels in [0, 1] yield scores in
//! [0, 1] with no clamping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::seed;

/// Hyperparameters for [`rf_regression_fit`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RfRegressorConfig {
    /// Number of bootstrap trees.
    pub n_estimators: usize,
    /// Minimum rows a node needs before a split is attempted.
    pub min_samples_split: usize,
    /// Minimum rows required on each side of a split.
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all of them.
    pub features_per_split: Option<usize>,
    /// Root seed; tree `i` draws from a stream derived as `(seed, "tree", i)`.
    pub seed: u64,
}

impl RfRegressorConfig {
    /// Defaults: 100 trees, split ≥ 10, leaf ≥ 5, all features per split.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_estimators: 100,
            min_samples_split: 10,
            min_samples_leaf: 5,
            features_per_split: None,
            seed,
        }
    }
}

/// One node of a regression tree, stored in a flat arena.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "node")]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RegressionTree {
    pub(crate) nodes: Vec<RegNode>,
}

impl RegressionTree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                RegNode::Leaf { .. } => return at,
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.nodes[self.leaf_of(x)] {
            RegNode::Leaf { value, .. } => *value,
            RegNode::Split { .. } => unreachable!("leaf_of returns a leaf"),
        }
    }
}

/// A fitted forest of regression trees.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RandomForestRegressor {
    pub(crate) trees: Vec<RegressionTree>,
    pub(crate) config: RfRegressorConfig,
    pub(crate) dim: usize,
}

impl RandomForestRegressor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> &RfRegressorConfig {
        &self.config
    }

    /// Mean of the routed leaf values across all trees.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(SurvError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let first = self.trees[0].eval(x);
        let mut sum = first;
        let mut all_same = true;
        for t in &self.trees[1..] {
            let v = t.eval(x);
            all_same &= v == first;
            sum += v;
        }
        if all_same {
            // The mean of identical values is that value; skip the summation
            // rounding so unanimous forests (e.g. constant labels) are exact.
            return Ok(first);
        }
        Ok(sum / self.trees.len() as f64)
    }

    /// Leaf index `x` routes to in tree `tree` (for structural tests).
    pub fn leaf_index(&self, tree: usize, x: &[f64]) -> usize {
        self.trees[tree].leaf_of(x)
    }
}

/// Candidate split thresholds and their scores for a single feature.
///
/// Rows are sorted by feature value once; every boundary between distinct
/// adjacent values is a candidate threshold (exact CART — each evaluation is
/// O(1), so there is nothing to gain from subsampling candidates). The score
/// maximized is `sum_L^2/n_L + sum_R^2/n_R`, which orders splits identically
/// to the within-node variance reduction (the parent term is constant), and
/// it is accumulated incrementally in one pass.
fn feature_candidates(
    sorted: &[(f64, f64)], // (feature value, label), ascending by value
    min_leaf: usize,
) -> Vec<(f64, f64)> {
    let m = sorted.len();
    let total: f64 = sorted.iter().map(|&(_, y)| y).sum();
    let mut out = Vec::new();
    let mut prefix = 0.0;
    // Boundary k sits between sorted[k-1] and sorted[k].
    for k in 1..m {
        prefix += sorted[k - 1].1;
        if sorted[k].0 <= sorted[k - 1].0 {
            continue;
        }
        if k < min_leaf || m - k < min_leaf {
            continue;
        }
        let left = prefix * prefix / k as f64;
        let right = (total - prefix) * (total - prefix) / (m - k) as f64;
        let threshold = 0.5 * (sorted[k - 1].0 + sorted[k].0);
        out.push((threshold, left + right));
    }
    out
}

struct TreeBuilder<'a> {
    xs: &'a [Vec<f64>],
    ys: &'a [f64],
    config: &'a RfRegressorConfig,
    features_per_split: usize,
    nodes: Vec<RegNode>,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: &[usize], rng: &mut impl rand::Rng) -> usize {
        let m = rows.len();
        let first = self.ys[rows[0]];
        let all_equal = rows.iter().all(|&i| self.ys[i] == first);
        if m < self.config.min_samples_split || all_equal {
            return self.push_leaf(rows);
        }

        let d = self.xs[rows[0]].len();
        let feature_ids: Vec<usize> = if self.features_per_split >= d {
            (0..d).collect()
        } else {
            rand::seq::index::sample(rng, d, self.features_per_split).into_vec()
        };

        // Parent score in the same `sum^2/n` form; a split must beat it.
        let total: f64 = rows.iter().map(|&i| self.ys[i]).sum();
        let parent = total * total / m as f64;

        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut sorted: Vec<(f64, f64)> = Vec::with_capacity(m);
        for &f in &feature_ids {
            sorted.clear();
            sorted.extend(rows.iter().map(|&i| (self.xs[i][f], self.ys[i])));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for (threshold, score) in
                feature_candidates(&sorted, self.config.min_samples_leaf)
            {
                if score <= parent + 1e-12 {
                    continue; // no real variance reduction
                }
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.push_leaf(rows);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.xs[i][feature] <= threshold);

        let at = self.nodes.len();
        self.nodes.push(RegNode::Split {
            feature,
            threshold,
            left: usize::MAX,
            right: usize::MAX,
        });
        let l = self.grow(&left_rows, rng);
        let r = self.grow(&right_rows, rng);
        if let RegNode::Split { left, right, .. } = &mut self.nodes[at] {
            *left = l;
            *right = r;
        }
        at
    }

    fn push_leaf(&mut self, rows: &[usize]) -> usize {
        let first = self.ys[rows[0]];
        let value = if rows.iter().all(|&i| self.ys[i] == first) {
            first // exact for pure leaves, no summation rounding
        } else {
            rows.iter().map(|&i| self.ys[i]).sum::<f64>() / rows.len() as f64
        };
        let at = self.nodes.len();
        self.nodes.push(RegNode::Leaf {
            value,
            n: rows.len(),
        });
        at
    }
}

fn build_tree(
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &RfRegressorConfig,
    fps: usize,
    index: usize,
) -> RegressionTree {
    let mut rng = seed::rng(config.seed, "tree", index as u64);
    let n = xs.len();
    let rows: Vec<usize> = (0..n)
        .map(|_| rand::Rng::random_range(&mut rng, 0..n))
        .collect();
    let mut builder = TreeBuilder {
        xs,
        ys,
        config,
        features_per_split: fps,
        nodes: Vec::new(),
    };
    let root = builder.grow(&rows, &mut rng);
    debug_assert_eq!(root, 0);
    RegressionTree {
        nodes: builder.nodes,
    }
}

/// Fit a regression forest on rows `xs` with targets `ys`.
///
/// Deterministic for a fixed config seed regardless of thread count: tree `i`
/// always uses the RNG stream `(seed, "tree", i)` and trees are collected in
/// index order.
pub fn rf_regression_fit(
    xs: &[Vec<f64>],
    ys: &[f64],
    config: &RfRegressorConfig,
) -> Result<RandomForestRegressor> {
    if xs.is_empty() {
        return Err(SurvError::InvalidArgument(
            "regression forest needs at least one row".into(),
        ));
    }
    if xs.len() != ys.len() {
        return Err(SurvError::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if config.n_estimators == 0 {
        return Err(SurvError::InvalidArgument("n_estimators must be ≥ 1".into()));
    }
    if config.min_samples_leaf == 0 {
        return Err(SurvError::InvalidArgument(
            "min_samples_leaf must be ≥ 1".into(),
        ));
    }
    let d = xs[0].len();
    if d == 0 {
        return Err(SurvError::InvalidArgument("rows have zero features".into()));
    }
    for (i, x) in xs.iter().enumerate() {
        if x.len() != d {
            return Err(SurvError::InvalidArgument(format!(
                "row {i} has {} features, row 0 has {d}",
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::InvalidArgument(format!(
                "row {i} contains a non-finite feature"
            )));
        }
    }
    if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
        return Err(SurvError::InvalidArgument(format!(
            "target {i} is non-finite"
        )));
    }
    let fps = config.features_per_split.unwrap_or(d).clamp(1, d);

    let trees: Vec<RegressionTree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|i| build_tree(xs, ys, config, fps, i))
        .collect();
    Ok(RandomForestRegressor {
        trees,
        config: config.clone(),
        dim: d,
    })
}
