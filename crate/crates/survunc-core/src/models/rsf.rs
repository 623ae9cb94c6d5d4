//! Random survival forest: bootstrap-grown trees split by the log-rank
//! test statistic, Nelson-Aalen leaf estimates, and curve averaging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::data::{SurvivalCurve, SurvivalDataset, TimeGrid};
use crate::error::{Result, SurvError};
use crate::models::{check_dim, Capabilities, SurvivalModel};
use crate::seed;

/// Forest hyperparameters; the first three follow the benchmark defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsfConfig {
    pub n_estimators: usize,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features tried per node; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    /// Cap on split thresholds examined per feature (quantile-spaced);
    /// bounds node cost at large sample sizes.
    pub max_candidate_thresholds: usize,
    pub seed: u64,
}

impl RsfConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            n_estimators: 100,
            min_samples_split: 20,
            min_samples_leaf: 5,
            features_per_split: None,
            max_candidate_thresholds: 32,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Distinct event times of the leaf's subjects.
        #[serde(with = "blob::f64s")]
        times: Vec<f64>,
        /// Nelson-Aalen cumulative hazard at those times.
        #[serde(with = "blob::f64s")]
        values: Vec<f64>,
        /// Bootstrap subjects the leaf was built from.
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTree {
    /// Root at index 0.
    pub nodes: Vec<TreeNode>,
}

/// Fitted random survival forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalForest {
    pub trees: Vec<SurvivalTree>,
    pub config: RsfConfig,
    /// Distinct training event times; the forest's native grid.
    pub grid: TimeGrid,
    pub dim: usize,
}

/// Two-sample log-rank chi-square statistic, computed directly from the
/// pooled event-time table. Returns 0 when the variance vanishes.
pub fn log_rank_statistic(
    times_a: &[f64],
    events_a: &[bool],
    times_b: &[f64],
    events_b: &[bool],
) -> f64 {
    let mut pooled: Vec<f64> = times_a
        .iter()
        .zip(events_a)
        .chain(times_b.iter().zip(events_b))
        .filter(|(_, &e)| e)
        .map(|(&t, _)| t)
        .collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();

    let mut o_minus_e = 0.0;
    let mut v = 0.0;
    for &t in &pooled {
        let n_a = times_a.iter().filter(|&&x| x >= t).count() as f64;
        let n_b = times_b.iter().filter(|&&x| x >= t).count() as f64;
        let d_a = times_a
            .iter()
            .zip(events_a)
            .filter(|(&x, &e)| e && x == t)
            .count() as f64;
        let d_b = times_b
            .iter()
            .zip(events_b)
            .filter(|(&x, &e)| e && x == t)
            .count() as f64;
        let n = n_a + n_b;
        let d = d_a + d_b;
        o_minus_e += d_a - n_a * d / n;
        if n > 1.0 {
            v += d * (n_a / n) * (1.0 - n_a / n) * (n - d) / (n - 1.0);
        }
    }
    if v > 1e-12 {
        o_minus_e * o_minus_e / v
    } else {
        0.0
    }
}

/// Pooled event-time table of one node, shared by all its split candidates.
struct NodeStats {
    /// Distinct event times, ascending.
    event_times: Vec<f64>,
    d_tot: Vec<f64>,
    n_tot: Vec<f64>,
    /// Per subject: number of node event times `<= t_j` (so the subject is
    /// at risk at event time `k` exactly when `bucket > k`).
    bucket: Vec<usize>,
}

impl NodeStats {
    fn build(times: &[f64], events: &[bool]) -> Self {
        let mut event_times: Vec<f64> = times
            .iter()
            .zip(events)
            .filter(|(_, &e)| e)
            .map(|(&t, _)| t)
            .collect();
        event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        event_times.dedup();
        let k = event_times.len();

        let bucket: Vec<usize> = times
            .iter()
            .map(|&t| event_times.partition_point(|&e| e <= t))
            .collect();

        let mut d_tot = vec![0.0; k];
        let mut cnt = vec![0.0; k + 1];
        for (j, (&t, &e)) in times.iter().zip(events).enumerate() {
            cnt[bucket[j]] += 1.0;
            if e {
                d_tot[bucket[j] - 1] += 1.0;
                debug_assert_eq!(event_times[bucket[j] - 1], t);
            }
        }
        // n_tot[k] = subjects with bucket > k.
        let mut n_tot = vec![0.0; k];
        let mut suffix = 0.0;
        for kk in (0..k).rev() {
            suffix += cnt[kk + 1];
            n_tot[kk] = suffix;
        }
        Self {
            event_times,
            d_tot,
            n_tot,
            bucket,
        }
    }
}

/// Incremental accumulator for the left child of a candidate split.
struct LeftStats {
    cnt_bucket: Vec<f64>,
    d_left: Vec<f64>,
    n_left_total: usize,
}

impl LeftStats {
    fn new(k: usize) -> Self {
        Self {
            cnt_bucket: vec![0.0; k + 1],
            d_left: vec![0.0; k],
            n_left_total: 0,
        }
    }

    fn add(&mut self, stats: &NodeStats, local: usize, event: bool) {
        let b = stats.bucket[local];
        self.cnt_bucket[b] += 1.0;
        if event {
            self.d_left[b - 1] += 1.0;
        }
        self.n_left_total += 1;
    }

    /// Log-rank chi-square of (left subjects) vs (the rest of the node);
    /// `None` when the variance vanishes.
    fn score(&self, stats: &NodeStats) -> Option<f64> {
        let k = stats.event_times.len();
        let mut o_minus_e = 0.0;
        let mut v = 0.0;
        let mut n_left_at_risk = 0.0;
        for kk in (0..k).rev() {
            n_left_at_risk += self.cnt_bucket[kk + 1];
            let n = stats.n_tot[kk];
            let d = stats.d_tot[kk];
            o_minus_e += self.d_left[kk] - n_left_at_risk * d / n;
            if n > 1.0 {
                let frac = n_left_at_risk / n;
                v += d * frac * (1.0 - frac) * (n - d) / (n - 1.0);
            }
        }
        (v > 1e-12).then(|| o_minus_e * o_minus_e / v)
    }
}

/// All valid `(threshold, score)` candidates for one feature at one node;
/// at most `max_candidates` thresholds, quantile-spaced over the distinct
/// boundaries. `local_order` is scratch reused across features.
fn feature_candidates(
    values: &[f64],
    events: &[bool],
    stats: &NodeStats,
    min_leaf: usize,
    max_candidates: usize,
) -> Vec<(f64, f64)> {
    let m = values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());

    // Positions p where a cut "left = sorted[..p]" is legal.
    let boundaries: Vec<usize> = (1..m)
        .filter(|&p| values[order[p - 1]] < values[order[p]])
        .collect();
    if boundaries.is_empty() {
        return Vec::new();
    }
    let chosen: Vec<usize> = if boundaries.len() <= max_candidates {
        boundaries
    } else {
        let step = boundaries.len() as f64 / max_candidates as f64;
        let mut picked: Vec<usize> = (0..max_candidates)
            .map(|q| boundaries[((q as f64 + 0.5) * step) as usize])
            .collect();
        picked.dedup();
        picked
    };

    let mut left = LeftStats::new(stats.event_times.len());
    let mut out = Vec::new();
    let mut next = 0usize;
    for p in 0..m {
        let j = order[p];
        left.add(stats, j, events[j]);
        if next < chosen.len() && p + 1 == chosen[next] {
            next += 1;
            let (n_l, n_r) = (p + 1, m - p - 1);
            if n_l >= min_leaf && n_r >= min_leaf {
                if let Some(score) = left.score(stats) {
                    let threshold = 0.5 * (values[order[p]] + values[order[p + 1]]);
                    out.push((threshold, score));
                }
            }
        }
    }
    out
}

/// Nelson-Aalen table (distinct event times, cumulative hazard) of a leaf.
fn leaf_estimate(times: &[f64], events: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let stats = NodeStats::build(times, events);
    let mut values = Vec::with_capacity(stats.event_times.len());
    let mut h = 0.0;
    for k in 0..stats.event_times.len() {
        h += stats.d_tot[k] / stats.n_tot[k];
        values.push(h);
    }
    (stats.event_times, values)
}

/// `H(t)` of a leaf table (0 before the first event time).
fn leaf_eval(times: &[f64], values: &[f64], t: f64) -> f64 {
    match times.partition_point(|&e| e <= t).checked_sub(1) {
        Some(k) => values[k],
        None => 0.0,
    }
}

struct TreeBuilder<'a> {
    train: &'a SurvivalDataset,
    config: &'a RsfConfig,
    features_per_split: usize,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    /// Grow the subtree over `rows` (training indices with bootstrap
    /// multiplicity); returns the node id.
    fn grow(&mut self, rows: &[usize], rng: &mut rand_chacha::ChaCha8Rng) -> usize {
        let m = rows.len();
        let times: Vec<f64> = rows.iter().map(|&i| self.train.record(i).time).collect();
        let events: Vec<bool> = rows.iter().map(|&i| self.train.record(i).event).collect();

        let all_same_time = times.windows(2).all(|w| w[0] == w[1]);
        let no_events = !events.iter().any(|&e| e);
        if m < self.config.min_samples_split || all_same_time || no_events {
            return self.push_leaf(&times, &events, m);
        }

        let stats = NodeStats::build(&times, &events);
        let d = self.train.d();
        let feature_choice =
            rand::seq::index::sample(rng, d, self.features_per_split.min(d)).into_vec();

        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        for &f in &feature_choice {
            let values: Vec<f64> = rows
                .iter()
                .map(|&i| self.train.record(i).covariates[f])
                .collect();
            for (threshold, score) in feature_candidates(
                &values,
                &events,
                &stats,
                self.config.min_samples_leaf,
                self.config.max_candidate_thresholds,
            ) {
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, f, threshold));
                }
            }
        }

        let Some((_, feature, threshold)) = best else {
            return self.push_leaf(&times, &events, m);
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.train.record(i).covariates[feature] <= threshold);
        debug_assert!(left_rows.len() >= self.config.min_samples_leaf);
        debug_assert!(right_rows.len() >= self.config.min_samples_leaf);

        let id = self.nodes.len();
        self.nodes.push(TreeNode::Split {
            feature,
            threshold,
            left: 0,
            right: 0,
        });
        let left = self.grow(&left_rows, rng);
        let right = self.grow(&right_rows, rng);
        if let TreeNode::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    fn push_leaf(&mut self, times: &[f64], events: &[bool], n: usize) -> usize {
        let (lt, lv) = leaf_estimate(times, events);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            times: lt,
            values: lv,
            n,
        });
        id
    }
}

fn build_tree(train: &SurvivalDataset, config: &RsfConfig, fps: usize, index: usize) -> SurvivalTree {
    let mut rng = seed::rng(config.seed, "tree", index as u64);
    let n = train.n();
    let rows: Vec<usize> = (0..n)
        .map(|_| rand::Rng::random_range(&mut rng, 0..n))
        .collect();
    let mut builder = TreeBuilder {
        train,
        config,
        features_per_split: fps,
        nodes: Vec::new(),
    };
    let root = builder.grow(&rows, &mut rng);
    debug_assert_eq!(root, 0);
    if builder.nodes.len() == 1 {
        log::warn!("tree {index}: no valid split at the root; single-leaf tree");
    }
    SurvivalTree {
        nodes: builder.nodes,
    }
}

/// Fit a random survival forest. Trees are grown on bootstrap samples in
/// parallel, each from its own derived seed, so the result is independent
/// of the worker count.
pub fn rsf_fit(train: &SurvivalDataset, config: &RsfConfig) -> Result<SurvivalForest> {
    if train.n() < config.min_samples_split {
        return Err(SurvError::InvalidArgument(format!(
            "need at least min_samples_split={} subjects, got {}",
            config.min_samples_split,
            train.n()
        )));
    }
    if config.n_estimators == 0 {
        return Err(SurvError::InvalidArgument("n_estimators must be positive".into()));
    }
    if config.min_samples_leaf == 0 {
        return Err(SurvError::InvalidArgument("min_samples_leaf must be positive".into()));
    }
    if train.n_events() == 0 {
        return Err(SurvError::InvalidArgument(
            "cannot fit a survival forest on a dataset with zero events".into(),
        ));
    }
    let d = train.d();
    let fps = config
        .features_per_split
        .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
        .clamp(1, d);

    let trees: Vec<SurvivalTree> = (0..config.n_estimators)
        .into_par_iter()
        .map(|i| build_tree(train, config, fps, i))
        .collect();

    let grid = TimeGrid::new(train.distinct_event_times())?;
    Ok(SurvivalForest {
        trees,
        config: config.clone(),
        grid,
        dim: d,
    })
}

impl SurvivalForest {
    /// Leaf reached by `x` in tree `tree_idx`.
    fn leaf_of(&self, tree_idx: usize, x: &[f64]) -> &TreeNode {
        let tree = &self.trees[tree_idx];
        let mut id = 0usize;
        loop {
            match &tree.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
                leaf => return leaf,
            }
        }
    }

    /// Index of the leaf node reached by `x` (for structural tests).
    pub fn leaf_index(&self, tree_idx: usize, x: &[f64]) -> usize {
        let tree = &self.trees[tree_idx];
        let mut id = 0usize;
        loop {
            match &tree.nodes[id] {
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { .. } => return id,
            }
        }
    }
}

impl SurvivalModel for SurvivalForest {
    fn dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_dropout: false,
            supports_reseed: true,
        }
    }

    fn native_grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn predict_survival(&self, x: &[f64], grid: &TimeGrid) -> Result<SurvivalCurve> {
        check_dim(self.dim, x)?;
        let g = grid.times();
        let mut acc = vec![0.0f64; g.len()];
        for tree_idx in 0..self.trees.len() {
            let TreeNode::Leaf { times, values, .. } = self.leaf_of(tree_idx, x) else {
                unreachable!("routing always ends at a leaf");
            };
            // Merge walk: grid and leaf times are both ascending.
            let mut l = 0usize;
            for (k, &t) in g.iter().enumerate() {
                while l < times.len() && times[l] <= t {
                    l += 1;
                }
                let h = if l == 0 { 0.0 } else { values[l - 1] };
                acc[k] += (-h).exp();
            }
        }
        let n_trees = self.trees.len() as f64;
        let probs = acc.into_iter().map(|s| s / n_trees).collect();
        SurvivalCurve::new(grid.clone(), probs)
    }

    fn predict_survival_at(&self, x: &[f64], t: f64) -> Result<f64> {
        check_dim(self.dim, x)?;
        let mut acc = 0.0;
        for tree_idx in 0..self.trees.len() {
            let TreeNode::Leaf { times, values, .. } = self.leaf_of(tree_idx, x) else {
                unreachable!("routing always ends at a leaf");
            };
            acc += (-leaf_eval(times, values, t)).exp();
        }
        Ok(acc / self.trees.len() as f64)
    }
}
