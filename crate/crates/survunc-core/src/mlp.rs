//! Micro MLP engine: dense rectifier networks with inverted dropout, an
//! Adam optimizer, squared-error and within-batch proportional-hazards
//! losses with analytic gradients, and a shared early-stopping train loop.
//!
//! Scalar-output networks only — both users (the hazard model and the
//! uncertainty meta-model) regress a single value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurvError};
use crate::seed;

/// Fully connected network with rectifier hidden layers.
///
/// Weights are initialized from a rectifier-scaled normal distribution
/// (stddev `sqrt(2 / fan_in)`), biases at zero; the draw is fully
/// determined by the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `[input, hidden..., 1]`.
    pub layer_sizes: Vec<usize>,
    /// Per layer, row-major `out x in`.
    pub weights: Vec<Vec<f64>>,
    /// Per layer, length `out`.
    pub biases: Vec<Vec<f64>>,
    /// Probability of zeroing each hidden unit during a dropout pass.
    pub dropout: f64,
    /// Apply a sigmoid to the final pre-activation.
    pub sigmoid_output: bool,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Mlp {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        dropout: f64,
        sigmoid_output: bool,
        seed_value: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(SurvError::InvalidArgument("input dimension 0".into()));
        }
        if hidden.contains(&0) {
            return Err(SurvError::InvalidArgument("hidden layer of width 0".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(SurvError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {dropout}"
            )));
        }
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(1);

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_sizes.len() - 1 {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = seed::rng(seed_value, "mlp-init", l as u64);
            let w = (0..fan_in * fan_out)
                .map(|_| seed::standard_normal(&mut rng) * std)
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            dropout,
            sigmoid_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(SurvError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Deterministic forward pass (dropout disabled).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(x, None)?.output)
    }

    /// Forward pass under a fixed set of dropout masks.
    pub fn forward_masked(&self, x: &[f64], masks: &DropoutMasks) -> Result<f64> {
        Ok(self.forward_cached(x, Some(masks))?.output)
    }

    fn forward_cached(&self, x: &[f64], masks: Option<&DropoutMasks>) -> Result<ForwardCache> {
        self.check_input(x)?;
        if let Some(m) = masks {
            if m.masks.len() != self.n_layers() - 1 {
                return Err(SurvError::DimensionMismatch {
                    expected: self.n_layers() - 1,
                    got: m.masks.len(),
                });
            }
        }
        let mut activations: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a_prev = &activations[l];
            let w = &self.weights[l];
            let mut z = self.biases[l].clone();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(a_prev).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            let a = if l + 1 < self.n_layers() {
                let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                if let Some(m) = masks {
                    for (ai, &mi) in a.iter_mut().zip(&m.masks[l]) {
                        *ai *= mi;
                    }
                }
                a
            } else {
                debug_assert_eq!(n_out, 1);
                if self.sigmoid_output {
                    vec![sigmoid(z[0])]
                } else {
                    vec![z[0]]
                }
            };
            pre.push(z);
            activations.push(a);
        }
        let output = activations.last().unwrap()[0];
        Ok(ForwardCache {
            activations,
            pre,
            output,
        })
    }

    /// Backpropagate `d_loss/d_output` for one cached sample into `grads`.
    fn backward(&self, cache: &ForwardCache, d_output: f64, masks: Option<&DropoutMasks>, grads: &mut Grads) {
        let last = self.n_layers() - 1;
        // Gradient w.r.t. the final pre-activation.
        let mut delta: Vec<f64> = if self.sigmoid_output {
            let y = cache.output;
            vec![d_output * y * (1.0 - y)]
        } else {
            vec![d_output]
        };
        for l in (0..=last).rev() {
            let n_in = self.layer_sizes[l];
            let a_prev = &cache.activations[l];
            for (o, &dz) in delta.iter().enumerate() {
                grads.biases[l][o] += dz;
                let row = &mut grads.weights[l][o * n_in..(o + 1) * n_in];
                for (g, &ai) in row.iter_mut().zip(a_prev) {
                    *g += dz * ai;
                }
            }
            if l == 0 {
                break;
            }
            // d loss / d a_{l-1}, then through dropout and the rectifier.
            let mut prev_delta = vec![0.0; n_in];
            let w = &self.weights[l];
            for (o, &dz) in delta.iter().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                for (pd, &wi) in prev_delta.iter_mut().zip(row) {
                    *pd += dz * wi;
                }
            }
            if let Some(m) = masks {
                for (pd, &mi) in prev_delta.iter_mut().zip(&m.masks[l - 1]) {
                    *pd *= mi;
                }
            }
            for (pd, &z) in prev_delta.iter_mut().zip(&cache.pre[l - 1]) {
                if z <= 0.0 {
                    *pd = 0.0;
                }
            }
            delta = prev_delta;
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// All parameters flattened (weights then biases, layer by layer).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..self.n_layers() {
            out.extend_from_slice(&self.weights[l]);
            out.extend_from_slice(&self.biases[l]);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self
            .weights
            .iter()
            .map(|w| w.len())
            .chain(self.biases.iter().map(|b| b.len()))
            .sum();
        if flat.len() != total {
            return Err(SurvError::DimensionMismatch {
                expected: total,
                got: flat.len(),
            });
        }
        let mut k = 0;
        for l in 0..self.n_layers() {
            let nw = self.weights[l].len();
            self.weights[l].copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = self.biases[l].len();
            self.biases[l].copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
        Ok(())
    }
}

/// Per-sample forward cache used by backprop.
struct ForwardCache {
    /// `activations[0]` is the input; last entry is the output vector.
    activations: Vec<Vec<f64>>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    output: f64,
}

/// Inverted-dropout masks for each hidden layer: entries are either `0`
/// or `1/(1 - rate)` so the masked forward pass is unbiased in expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    /// Sample one mask per hidden layer.
    pub fn sample<R: Rng>(layer_sizes: &[usize], rate: f64, rng: &mut R) -> Self {
        let keep = 1.0 - rate;
        let masks = layer_sizes[1..layer_sizes.len() - 1]
            .iter()
            .map(|&width| {
                (0..width)
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            1.0 / keep
                        }
                    })
                    .collect()
            })
            .collect();
        Self { masks }
    }

    /// Identity masks (dropout disabled).
    pub fn identity(layer_sizes: &[usize]) -> Self {
        let masks = layer_sizes[1..layer_sizes.len() - 1]
            .iter()
            .map(|&width| vec![1.0; width])
            .collect();
        Self { masks }
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Grads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Grads {
    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|g| g.is_finite()))
    }
}

/// Mean squared error over a batch, with analytic gradient.
///
/// `masks`, when given, must hold one mask set per batch sample (training
/// dropout); `None` runs the deterministic network.
pub fn mse_loss_and_grad(
    mlp: &Mlp,
    xs: &[&[f64]],
    ys: &[f64],
    masks: Option<&[DropoutMasks]>,
) -> Result<(f64, Grads)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(SurvError::InvalidArgument(
            "squared-error loss needs equally many inputs and targets".into(),
        ));
    }
    if let Some(m) = masks {
        if m.len() != xs.len() {
            return Err(SurvError::DimensionMismatch {
                expected: xs.len(),
                got: m.len(),
            });
        }
    }
    let n = xs.len() as f64;
    let mut grads = mlp.zero_grads();
    let mut loss = 0.0;
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let mask = masks.map(|m| &m[i]);
        let cache = mlp.forward_cached(x, mask)?;
        let err = cache.output - y;
        loss += err * err / n;
        mlp.backward(&cache, 2.0 * err / n, mask, &mut grads);
    }
    Ok((loss, grads))
}

/// Negative log partial likelihood of a proportional-hazards model over one
/// minibatch, risk sets formed within the batch, ties handled by keeping
/// tied subjects in each other's risk sets. Normalized by the number of
/// events in the batch.
///
/// Returns `Ok(None)` when the batch holds no events (nothing to learn from).
pub fn cox_loss_and_grad(
    mlp: &Mlp,
    xs: &[&[f64]],
    times: &[f64],
    events: &[bool],
    masks: Option<&[DropoutMasks]>,
) -> Result<Option<(f64, Grads)>> {
    let b = xs.len();
    if b == 0 || times.len() != b || events.len() != b {
        return Err(SurvError::InvalidArgument(
            "hazard loss needs aligned inputs, times, and events".into(),
        ));
    }
    if mlp.sigmoid_output {
        return Err(SurvError::InvalidArgument(
            "hazard loss requires an identity output layer".into(),
        ));
    }
    if let Some(m) = masks {
        if m.len() != b {
            return Err(SurvError::DimensionMismatch {
                expected: b,
                got: m.len(),
            });
        }
    }
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Ok(None);
    }

    let mut caches = Vec::with_capacity(b);
    for (i, &x) in xs.iter().enumerate() {
        caches.push(mlp.forward_cached(x, masks.map(|m| &m[i]))?);
    }
    let eta: Vec<f64> = caches.iter().map(|c| c.output).collect();

    let (loss, d_eta) = cox_eta_loss_grad(&eta, times, events)?;

    let mut grads = mlp.zero_grads();
    for (i, cache) in caches.iter().enumerate() {
        if d_eta[i] != 0.0 {
            mlp.backward(cache, d_eta[i], masks.map(|m| &m[i]), &mut grads);
        }
    }
    Ok(Some((loss, grads)))
}

/// Loss and gradient of the within-batch negative log partial likelihood as
/// a function of the linear predictors alone. Shared with the linear model's
/// validation-loss reporting.
pub fn cox_eta_loss_grad(eta: &[f64], times: &[f64], events: &[bool]) -> Result<(f64, Vec<f64>)> {
    let b = eta.len();
    let n_events = events.iter().filter(|&&e| e).count();
    if n_events == 0 {
        return Err(SurvError::InvalidArgument("no events in batch".into()));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| times[i].partial_cmp(&times[j]).unwrap());

    let c = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    // Suffix sums of exp(eta - c) in time order.
    let mut suffix = vec![0.0f64; b + 1];
    for p in (0..b).rev() {
        suffix[p] = suffix[p + 1] + (eta[order[p]] - c).exp();
    }

    // Tie groups share the risk-set denominator of their first position.
    let mut group_start = vec![0usize; b];
    let mut p = 0;
    while p < b {
        let t = times[order[p]];
        let mut q = p;
        while q < b && times[order[q]] == t {
            group_start[q] = p;
            q += 1;
        }
        p = q;
    }

    let m = n_events as f64;
    let mut loss = 0.0;
    for p in 0..b {
        let i = order[p];
        if events[i] {
            let log_denom = c + suffix[group_start[p]].ln();
            loss -= (eta[i] - log_denom) / m;
        }
    }

    // d loss / d eta_j = (1/m) * (-delta_j + exp(eta_j - c) * Q(pos j)),
    // Q = running sum of 1/denominator over events whose risk set includes j.
    let mut d_eta = vec![0.0f64; b];
    let mut q_run = 0.0;
    let mut p = 0;
    while p < b {
        let start = p;
        let denom = suffix[start];
        let mut q = p;
        let mut group_events = 0;
        while q < b && times[order[q]] == times[order[start]] {
            if events[order[q]] {
                group_events += 1;
            }
            q += 1;
        }
        q_run += group_events as f64 / denom;
        for &j in &order[start..q] {
            let delta = if events[j] { 1.0 } else { 0.0 };
            d_eta[j] = (-delta + (eta[j] - c).exp() * q_run) / m;
        }
        p = q;
    }
    if !loss.is_finite() {
        return Err(SurvError::Convergence("non-finite hazard loss".into()));
    }
    Ok((loss, d_eta))
}

/// Adam optimizer with bias correction (decay rates 0.9/0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Grads,
    v: Grads,
}

impl Adam {
    pub fn new(mlp: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: mlp.zero_grads(),
            v: mlp.zero_grads(),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
        };
        for l in 0..mlp.weights.len() {
            for k in 0..mlp.weights[l].len() {
                let g = grads.weights[l][k];
                let (m, v) = (&mut self.m.weights[l][k], &mut self.v.weights[l][k]);
                update(&mut mlp.weights[l][k], g, m, v);
            }
            for k in 0..mlp.biases[l].len() {
                let g = grads.biases[l][k];
                let (m, v) = (&mut self.m.biases[l][k], &mut self.v.biases[l][k]);
                update(&mut mlp.biases[l][k], g, m, v);
            }
        }
    }
}

/// Optimization settings for the train loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_val_loss: f64,
    pub skipped_batches: usize,
}

/// Minibatch training with epoch-wise shuffling, Adam updates, and early
/// stopping on a validation loss (best weights restored).
///
/// `batch_step(mlp, batch_indices, step)` returns the batch loss and
/// gradient, or `None` to skip the batch (counted and warned about);
/// `step` is a per-batch counter usable for deriving dropout masks.
pub fn train_loop<F, V>(
    mlp: &mut Mlp,
    n: usize,
    settings: &TrainSettings,
    mut batch_step: F,
    mut val_loss: V,
) -> Result<TrainReport>
where
    F: FnMut(&Mlp, &[usize], u64) -> Result<Option<(f64, Grads)>>,
    V: FnMut(&Mlp) -> Result<f64>,
{
    if n == 0 {
        return Err(SurvError::InvalidArgument("empty training set".into()));
    }
    if settings.batch == 0 || settings.epochs == 0 {
        return Err(SurvError::InvalidArgument(
            "batch size and epoch count must be positive".into(),
        ));
    }
    let mut adam = Adam::new(mlp, settings.lr);
    let mut best = (f64::INFINITY, mlp.clone());
    let mut since_best = 0usize;
    let mut skipped = 0usize;
    let mut epochs_run = 0usize;
    let mut step: u64 = 0;

    for epoch in 0..settings.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = seed::rng(settings.seed, "epoch-shuffle", epoch as u64);
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        for batch in order.chunks(settings.batch) {
            match batch_step(mlp, batch, step)? {
                Some((loss, grads)) => {
                    if !loss.is_finite() || !grads.is_finite() {
                        return Err(SurvError::Convergence(format!(
                            "non-finite training loss at epoch {epoch}"
                        )));
                    }
                    adam.step(mlp, &grads);
                }
                None => {
                    skipped += 1;
                    log::warn!("skipping uninformative minibatch at epoch {epoch}");
                }
            }
            step += 1;
        }
        epochs_run = epoch + 1;
        let vl = val_loss(mlp)?;
        if !vl.is_finite() {
            return Err(SurvError::Convergence(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }
        if vl < best.0 - 1e-12 {
            best = (vl, mlp.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > settings.patience {
                break;
            }
        }
    }
    *mlp = best.1;
    Ok(TrainReport {
        epochs_run,
        best_val_loss: best.0,
        skipped_batches: skipped,
    })
}

/// Maximum component-wise relative disagreement between two gradients,
/// `|a-b| / max(|a|, |b|, 1)` — the yardstick for finite-difference checks.
pub fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Central finite-difference gradient of `f` at the network's current
/// parameters.
pub fn finite_difference_grad<F>(mlp: &Mlp, h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&Mlp) -> Result<f64>,
{
    let base = mlp.params_flat();
    let mut probe = mlp.clone();
    let mut grad = Vec::with_capacity(base.len());
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        probe.set_params_flat(&p)?;
        let up = f(&probe)?;
        p[k] = base[k] - h;
        probe.set_params_flat(&p)?;
        let down = f(&probe)?;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Flatten a `Grads` in the same order as [`Mlp::params_flat`].
pub fn grads_flat(grads: &Grads) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..grads.weights.len() {
        out.extend_from_slice(&grads.weights[l]);
        out.extend_from_slice(&grads.biases[l]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_inputs(n: usize, d: usize, seed_value: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed_value, "toy-x", 0);
        (0..n)
            .map(|_| (0..d).map(|_| seed::standard_normal(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let a = Mlp::new(5, &[32], 0.1, false, 42).unwrap();
        let b = Mlp::new(5, &[32], 0.1, false, 42).unwrap();
        assert_eq!(a, b);
        let c = Mlp::new(5, &[32], 0.1, false, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.layer_sizes, vec![5, 32, 1]);
        assert_eq!(a.weights[0].len(), 5 * 32);
        assert_eq!(a.weights[1].len(), 32);
        assert!(a.biases.iter().all(|b| b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let m = Mlp::new(4, &[8], 0.0, false, 1).unwrap();
        assert!(m.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn dropout_masks_zero_and_scale() {
        let sizes = [4usize, 50, 50, 1];
        let mut rng = seed::rng(9, "mask", 0);
        let mut zeroed = 0usize;
        let mut total = 0usize;
        for _ in 0..200 {
            let m = DropoutMasks::sample(&sizes, 0.1, &mut rng);
            assert_eq!(m.masks.len(), 2);
            for layer in &m.masks {
                for &v in layer {
                    assert!(v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-12);
                    zeroed += (v == 0.0) as usize;
                    total += 1;
                }
            }
        }
        let rate = zeroed as f64 / total as f64;
        assert!((rate - 0.1).abs() < 0.01, "empirical dropout rate {rate}");
    }

    #[test]
    fn every_hidden_unit_drops_within_100_passes() {
        let sizes = [4usize, 32, 1];
        let mut hit = [false; 32];
        for pass in 0..100u64 {
            let mut rng = seed::rng(7, "drop-pass", pass);
            let m = DropoutMasks::sample(&sizes, 0.1, &mut rng);
            for (h, &v) in hit.iter_mut().zip(&m.masks[0]) {
                *h |= v == 0.0;
            }
        }
        assert!(hit.iter().all(|&h| h), "some unit never dropped in 100 passes");
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        for cfg in 0..3u64 {
            let hidden: &[usize] = match cfg {
                0 => &[6],
                1 => &[8, 4],
                _ => &[5, 5],
            };
            let mlp = Mlp::new(3, hidden, 0.0, true, 100 + cfg).unwrap();
            let xs = toy_inputs(12, 3, 200 + cfg);
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let ys: Vec<f64> = (0..12).map(|i| (i as f64 * 0.61).sin().abs()).collect();
            let (_, grads) = mse_loss_and_grad(&mlp, &refs, &ys, None).unwrap();
            let fd = finite_difference_grad(&mlp, 1e-5, |m| {
                Ok(mse_loss_and_grad(m, &refs, &ys, None)?.0)
            })
            .unwrap();
            let gap = max_relative_gap(&grads_flat(&grads), &fd);
            assert!(gap < 1e-6, "config {cfg}: gradient gap {gap}");
        }
    }

    #[test]
    fn mse_gradient_matches_finite_differences_under_fixed_dropout() {
        let mlp = Mlp::new(4, &[10], 0.3, true, 5).unwrap();
        let xs = toy_inputs(8, 4, 6);
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let ys = vec![0.2; 8];
        let mut rng = seed::rng(7, "fixed-mask", 0);
        let masks: Vec<DropoutMasks> = (0..8)
            .map(|_| DropoutMasks::sample(&mlp.layer_sizes, 0.3, &mut rng))
            .collect();
        let (_, grads) = mse_loss_and_grad(&mlp, &refs, &ys, Some(&masks)).unwrap();
        let fd = finite_difference_grad(&mlp, 1e-5, |m| {
            Ok(mse_loss_and_grad(m, &refs, &ys, Some(&masks))?.0)
        })
        .unwrap();
        let gap = max_relative_gap(&grads_flat(&grads), &fd);
        assert!(gap < 1e-6, "gradient gap {gap}");
    }

    #[test]
    fn cox_gradient_matches_finite_differences() {
        let mlp = Mlp::new(3, &[7], 0.0, false, 11).unwrap();
        let xs = toy_inputs(14, 3, 12);
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let mut rng = seed::rng(13, "cox-t", 0);
        // Include ties to exercise the grouped risk sets.
        let times: Vec<f64> = (0..14)
            .map(|i| if i % 5 == 0 { 2.0 } else { 0.5 + rng.random::<f64>() * 9.0 })
            .collect();
        let events: Vec<bool> = (0..14).map(|i| i % 3 != 1).collect();
        let (_, grads) = cox_loss_and_grad(&mlp, &refs, &times, &events, None)
            .unwrap()
            .unwrap();
        let fd = finite_difference_grad(&mlp, 1e-5, |m| {
            Ok(cox_loss_and_grad(m, &refs, &times, &events, None)?.unwrap().0)
        })
        .unwrap();
        let gap = max_relative_gap(&grads_flat(&grads), &fd);
        assert!(gap < 1e-6, "gradient gap {gap}");
    }

    #[test]
    fn cox_loss_skips_eventless_batch() {
        let mlp = Mlp::new(2, &[4], 0.0, false, 1).unwrap();
        let xs = toy_inputs(4, 2, 2);
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let out = cox_loss_and_grad(&mlp, &refs, &[1.0, 2.0, 3.0, 4.0], &[false; 4], None).unwrap();
        assert!(out.is_none());
    }

    #[test]
    fn cox_eta_loss_matches_hand_computation() {
        // Three subjects, times 1 < 2 < 3, all events, eta = (0, ln 2, ln 3).
        let eta = [0.0, 2.0f64.ln(), 3.0f64.ln()];
        let (loss, _) = cox_eta_loss_grad(&eta, &[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        let want = -((1.0f64 / 6.0).ln() + (2.0f64 / 5.0).ln() + 1.0f64.ln()) / 3.0;
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn train_loop_fits_a_simple_regression() {
        let xs = toy_inputs(200, 2, 21);
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| sigmoid(1.5 * x[0] - 0.8 * x[1]))
            .collect();
        let mut mlp = Mlp::new(2, &[16], 0.0, true, 22).unwrap();
        let settings = TrainSettings {
            lr: 0.01,
            epochs: 150,
            batch: 32,
            patience: 30,
            seed: 23,
        };
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let report = train_loop(
            &mut mlp,
            150,
            &settings,
            |m, batch, _| {
                let bx: Vec<&[f64]> = batch.iter().map(|&i| refs[i]).collect();
                let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
                mse_loss_and_grad(m, &bx, &by, None).map(Some)
            },
            |m| {
                let vx: Vec<&[f64]> = (150..200).map(|i| refs[i]).collect();
                let vy: Vec<f64> = (150..200).map(|i| ys[i]).collect();
                Ok(mse_loss_and_grad(m, &vx, &vy, None)?.0)
            },
        )
        .unwrap();
        assert!(
            report.best_val_loss < 0.002,
            "validation loss {}",
            report.best_val_loss
        );
    }

    #[test]
    fn train_loop_is_deterministic() {
        let xs = toy_inputs(60, 2, 31);
        let ys: Vec<f64> = xs.iter().map(|x| sigmoid(x[0])).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let run = || {
            let mut mlp = Mlp::new(2, &[8], 0.0, true, 32).unwrap();
            let settings = TrainSettings {
                lr: 0.01,
                epochs: 20,
                batch: 16,
                patience: 50,
                seed: 33,
            };
            train_loop(
                &mut mlp,
                60,
                &settings,
                |m, batch, _| {
                    let bx: Vec<&[f64]> = batch.iter().map(|&i| refs[i]).collect();
                    let by: Vec<f64> = batch.iter().map(|&i| ys[i]).collect();
                    mse_loss_and_grad(m, &bx, &by, None).map(Some)
                },
                |m| Ok(mse_loss_and_grad(m, &refs, &ys, None)?.0),
            )
            .unwrap();
            mlp
        };
        assert_eq!(run(), run());
    }
}
