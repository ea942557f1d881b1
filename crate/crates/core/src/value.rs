//! Per-attribute value heads over generator hidden states.
//!
//! A single MLP maps a hidden state to one predicted final score per
//! attribute (sigmoid outputs, so predictions live on the normalized unit
//! scale). Training regresses each step's prediction onto a λ-weighted
//! bootstrapped return built from the *same* network's later predictions
//! plus the trajectory's terminal reward:
//!
//! ```text
//! G_t = (1 − λ) · Σ_{n=1}^{T−t−1} λ^{n−1} · V(s_{t+n})  +  λ^{T−t−1} · r
//! G_{T−1} = r
//! ```
//!
//! λ trades bias for variance: `λ = 1` regresses every step onto the final
//! reward (pure Monte Carlo), `λ = 0` bootstraps each step from its
//! immediate successor. Targets are recomputed at the start of every epoch
//! and treated as constants within it (semi-gradient training), so the
//! parameter gradient is an exact gradient of the frozen-target loss — which
//! is what the finite-difference checks verify.

use serde::{Deserialize, Serialize};

use crate::attr::{AttributeVector, TargetVector};
use crate::error::Error;
use crate::rng::Rng;
use crate::Result;

/// Fraction of trajectories held out for the early-stopping criterion.
const HOLDOUT_FRAC: f64 = 0.1;

// =============================================================================
// Configuration and data
// =============================================================================

/// Training hyperparameters for [`ValueFunction::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    /// Return mixing coefficient in `[0, 1]`.
    pub lambda: f64,
    /// Adam step size.
    pub lr: f64,
    /// State–target pairs per parameter update.
    pub batch_size: usize,
    /// Upper bound on training epochs.
    pub max_epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Held-out loss must drop by at least this much to count as an
    /// improvement; guards patience against reset-by-rounding-error.
    pub min_delta: f64,
    /// Keep every `stride`-th step of each trajectory as a training pair
    /// (returns are still computed over the full trajectory).
    pub stride: usize,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator guard.
    pub eps: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        TdConfig {
            lambda: 0.9,
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-6,
            stride: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TdConfig {
    /// Checks optimizer and return invariants.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.stride == 0 {
            return Err(Error::InvalidConfig(
                "batch_size, max_epochs, patience, and stride must all be >= 1".into(),
            ));
        }
        if !self.min_delta.is_finite() || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "min_delta must be >= 0, got {}",
                self.min_delta
            )));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1), got {beta}"
                )));
            }
        }
        if !self.eps.is_finite() || self.eps <= 0.0 {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// One generation reduced to what value training needs: the per-step hidden
/// states and the normalized final reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// Hidden states `s_0 .. s_{T−1}`, one per generated token.
    pub states: Vec<Vec<f64>>,
    /// Normalized final attribute scores, each in `[0, 1]`.
    pub final_reward: AttributeVector,
}

impl TrajectorySample {
    /// Builds a sample and checks its invariants.
    pub fn new(states: Vec<Vec<f64>>, final_reward: AttributeVector) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Domain("trajectory has no states".into()));
        }
        let width = states[0].len();
        if states.iter().any(|s| s.len() != width) {
            return Err(Error::Domain("trajectory states differ in width".into()));
        }
        for (i, &r) in final_reward.iter().enumerate() {
            if !r.is_finite() || !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!(
                    "final reward[{i}] = {r} is outside [0, 1]"
                )));
            }
        }
        if final_reward.is_empty() {
            return Err(Error::Domain("trajectory has no reward entries".into()));
        }
        Ok(TrajectorySample {
            states,
            final_reward,
        })
    }
}

/// Per-epoch loss curves from one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean frozen-target MSE over the training pairs, per epoch.
    pub train_loss: Vec<f64>,
    /// Mean squared error against actual final rewards over the held-out
    /// trajectories, per epoch.
    pub holdout_loss: Vec<f64>,
    /// Epoch whose parameters were kept (lowest held-out loss).
    pub best_epoch: usize,
}

// =============================================================================
// λ-weighted returns
// =============================================================================

/// Bootstrapped returns for one trajectory of length `T`.
///
/// `values` holds the network's predictions at `s_1 .. s_{T−1}` (so `T−1`
/// entries) and `final_reward` the terminal scores; the result holds
/// `G_0 .. G_{T−1}`. Computed per attribute by the backward recursion
/// `G_{T−1} = r`, `G_t = (1−λ)·V(s_{t+1}) + λ·G_{t+1}`, which telescopes to
/// the explicit λ-weighted sum.
///
/// # Errors
///
/// Fails when `lambda` is outside `[0, 1]` or any value vector disagrees
/// with the reward's width.
pub fn td_lambda_returns(
    values: &[AttributeVector],
    final_reward: &AttributeVector,
    lambda: f64,
) -> Result<Vec<AttributeVector>> {
    if !(0.0..=1.0).contains(&lambda) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda {lambda} is outside [0, 1]")));
    }
    let m = final_reward.len();
    if m == 0 {
        return Err(Error::Domain("final reward is empty".into()));
    }
    for v in values {
        if v.len() != m {
            return Err(Error::DimensionMismatch {
                context: "td_lambda_returns",
                expected: m,
                got: v.len(),
            });
        }
    }
    let t_len = values.len() + 1;
    let mut returns = vec![vec![0.0; m]; t_len];
    returns[t_len - 1] = final_reward.clone();
    for t in (0..t_len - 1).rev() {
        for i in 0..m {
            returns[t][i] = (1.0 - lambda) * values[t][i] + lambda * returns[t + 1][i];
        }
    }
    Ok(returns)
}

// =============================================================================
// Model
// =============================================================================

/// One dense layer, row-major `dout × din`.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    din: usize,
    dout: usize,
}

/// MLP value heads: tanh hidden layers, sigmoid outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction {
    /// Layer widths `[input, hidden.., m]`.
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl ValueFunction {
    /// Initializes with Xavier-uniform weights (`±√(6/(fan_in+fan_out))`)
    /// and zero biases.
    pub fn init(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "value function needs at least input and output widths".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("value function widths must be >= 1".into()));
        }
        let layers = dims
            .windows(2)
            .map(|pair| {
                let (din, dout) = (pair[0], pair[1]);
                let scale = (6.0 / (din + dout) as f64).sqrt();
                Layer {
                    w: (0..din * dout).map(|_| rng.uniform(-scale, scale)).collect(),
                    b: vec![0.0; dout],
                    din,
                    dout,
                }
            })
            .collect();
        Ok(ValueFunction {
            dims: dims.to_vec(),
            layers,
        })
    }

    /// Layer widths `[input, hidden.., m]`.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Hidden-state width the network expects.
    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    /// Number of attribute heads.
    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Total parameter count across layers.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flattens parameters layer by layer as `[w, b]` pairs.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.w);
            flat.extend_from_slice(&layer.b);
        }
        flat
    }

    /// Rebuilds a network from [`ValueFunction::to_flat`] output.
    pub fn from_flat(dims: &[usize], flat: &[f64]) -> Result<Self> {
        let mut vf = ValueFunction::init(dims, &mut Rng::new(0))?;
        let expected = vf.param_count();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "ValueFunction::from_flat",
                expected,
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut vf.layers {
            let (w_len, b_len) = (layer.w.len(), layer.b.len());
            layer.w.copy_from_slice(&flat[offset..offset + w_len]);
            offset += w_len;
            layer.b.copy_from_slice(&flat[offset..offset + b_len]);
            offset += b_len;
        }
        Ok(vf)
    }

    fn check_input(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "ValueFunction input",
                expected: self.input_dim(),
                got: h.len(),
            });
        }
        Ok(())
    }

    /// Activations per layer: `acts[0]` is the input, `acts[k]` the output
    /// of layer `k` after its nonlinearity.
    fn forward_cached(&self, h: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(h.to_vec());
        for (k, layer) in self.layers.iter().enumerate() {
            let input = &acts[k];
            let last = k == self.layers.len() - 1;
            let mut out = vec![0.0; layer.dout];
            for (r, o) in out.iter_mut().enumerate() {
                let row = &layer.w[r * layer.din..(r + 1) * layer.din];
                let pre: f64 =
                    row.iter().zip(input).map(|(&w, &x)| w * x).sum::<f64>() + layer.b[r];
                *o = if last {
                    1.0 / (1.0 + (-pre).exp()) // sigmoid, keeps outputs in (0,1)
                } else {
                    pre.tanh()
                };
            }
            acts.push(out);
        }
        acts
    }

    /// Predicted normalized final scores for one hidden state; every entry
    /// lies strictly inside `(0, 1)`.
    pub fn forward(&self, h: &[f64]) -> Result<AttributeVector> {
        self.check_input(h)?;
        Ok(self.forward_cached(h).pop().unwrap())
    }

    /// Backpropagates `d_out = ∂L/∂output` to parameter gradients
    /// (accumulated into `grads`) and returns `∂L/∂input`.
    fn backprop(
        &self,
        acts: &[Vec<f64>],
        d_out: &[f64],
        mut grads: Option<&mut Vec<Layer>>,
    ) -> Vec<f64> {
        let last = self.layers.len() - 1;
        // Through the output sigmoid: σ' = σ(1−σ).
        let mut delta: Vec<f64> = d_out
            .iter()
            .zip(&acts[last + 1])
            .map(|(&d, &y)| d * y * (1.0 - y))
            .collect();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if let Some(g) = grads.as_deref_mut() {
                let gl = &mut g[k];
                for r in 0..layer.dout {
                    let d = delta[r];
                    let row = &mut gl.w[r * layer.din..(r + 1) * layer.din];
                    for (gw, &x) in row.iter_mut().zip(&acts[k]) {
                        *gw += d * x;
                    }
                    gl.b[r] += d;
                }
            }
            // δ_prev = Wᵀ δ, through tanh for hidden layers.
            let mut prev = vec![0.0; layer.din];
            for r in 0..layer.dout {
                let d = delta[r];
                let row = &layer.w[r * layer.din..(r + 1) * layer.din];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += w * d;
                }
            }
            if k > 0 {
                for (p, &a) in prev.iter_mut().zip(&acts[k]) {
                    *p *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Value and gradient of the steering objective
    /// `Σ_i w_i (V_i(h) − tau_i)²` with respect to the input state.
    pub fn grad_wrt_input(&self, h: &[f64], target: &TargetVector) -> Result<(f64, Vec<f64>)> {
        self.check_input(h)?;
        if target.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "grad_wrt_input target",
                expected: self.output_dim(),
                got: target.len(),
            });
        }
        let acts = self.forward_cached(h);
        let out = acts.last().unwrap();
        let mut loss = 0.0;
        let d_out: Vec<f64> = out
            .iter()
            .zip(target.tau.iter().zip(&target.weights))
            .map(|(&v, (&t, &w))| {
                let d = v - t;
                loss += w * d * d;
                2.0 * w * d
            })
            .collect();
        let grad = self.backprop(&acts, &d_out, None);
        Ok((loss, grad))
    }

    /// Value and gradient of the weighted sum `Σ_i w_i V_i(h)` with respect
    /// to the input state (for open-ended maximize/minimize steering).
    pub fn grad_weighted_sum(&self, h: &[f64], weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(h)?;
        if weights.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "grad_weighted_sum weights",
                expected: self.output_dim(),
                got: weights.len(),
            });
        }
        let acts = self.forward_cached(h);
        let out = acts.last().unwrap();
        let value: f64 = out.iter().zip(weights).map(|(&v, &w)| w * v).sum();
        let grad = self.backprop(&acts, weights, None);
        Ok((value, grad))
    }

    /// Mean squared error between predictions and fixed targets, averaged
    /// over pairs and attributes — the frozen-target training objective.
    pub fn mse_loss(&self, states: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
        let (loss, _count) = self.mse_loss_sum(states, targets)?;
        Ok(loss)
    }

    fn mse_loss_sum(&self, states: &[&[f64]], targets: &[&[f64]]) -> Result<(f64, usize)> {
        if states.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                context: "mse_loss pairs",
                expected: states.len(),
                got: targets.len(),
            });
        }
        if states.is_empty() {
            return Err(Error::Domain("mse_loss needs at least one pair".into()));
        }
        let m = self.output_dim();
        let mut total = 0.0;
        for (s, t) in states.iter().zip(targets) {
            let v = self.forward(s)?;
            if t.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "mse_loss target",
                    expected: m,
                    got: t.len(),
                });
            }
            total += v
                .iter()
                .zip(*t)
                .map(|(&v, &g)| (v - g) * (v - g))
                .sum::<f64>();
        }
        let count = states.len() * m;
        Ok((total / count as f64, count))
    }

    /// Loss and flat parameter gradient of [`ValueFunction::mse_loss`] over
    /// a batch, aligned with [`ValueFunction::to_flat`]. This is the exact
    /// gradient of the frozen-target objective, which finite differences can
    /// verify directly.
    pub fn mse_param_grad(
        &self,
        states: &[&[f64]],
        targets: &[&[f64]],
    ) -> Result<(f64, Vec<f64>)> {
        let mut grads: Vec<Layer> = self
            .layers
            .iter()
            .map(|l| Layer {
                w: vec![0.0; l.w.len()],
                b: vec![0.0; l.b.len()],
                din: l.din,
                dout: l.dout,
            })
            .collect();
        let m = self.output_dim();
        if states.len() != targets.len() || states.is_empty() {
            return Err(Error::Domain("mse_param_grad needs matched, non-empty pairs".into()));
        }
        let scale = 1.0 / (states.len() * m) as f64;
        let mut total = 0.0;
        for (s, t) in states.iter().zip(targets) {
            self.check_input(s)?;
            if t.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "mse_param_grad target",
                    expected: m,
                    got: t.len(),
                });
            }
            let acts = self.forward_cached(s);
            let out = acts.last().unwrap();
            let d_out: Vec<f64> = out
                .iter()
                .zip(*t)
                .map(|(&v, &g)| {
                    let d = v - g;
                    total += d * d;
                    2.0 * d * scale
                })
                .collect();
            self.backprop(&acts, &d_out, Some(&mut grads));
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for g in &grads {
            flat.extend_from_slice(&g.w);
            flat.extend_from_slice(&g.b);
        }
        Ok((total * scale, flat))
    }

    // -------------------------------------------------------------------------
    // Training
    // -------------------------------------------------------------------------

    /// Fits the network to a trajectory dataset.
    ///
    /// Each epoch: recompute λ-weighted returns for every trajectory under
    /// the current parameters, freeze them, then run mini-batch Adam on the
    /// frozen-target MSE. 10% of trajectories (at least one) are held out;
    /// their loss is measured against the actual final rewards rather than
    /// the bootstrapped returns, so model selection tracks real predictive
    /// quality instead of self-consistency. Training stops after `patience`
    /// epochs without held-out improvement, and the parameters with the
    /// best held-out loss are restored.
    ///
    /// # Errors
    ///
    /// Fails on invalid config, fewer than two trajectories, shape
    /// mismatches, or a non-finite loss (reported with its epoch).
    pub fn train(
        &mut self,
        data: &[TrajectorySample],
        cfg: &TdConfig,
        rng: &mut Rng,
    ) -> Result<TrainReport> {
        cfg.validate()?;
        if data.len() < 2 {
            return Err(Error::Domain(
                "training needs at least 2 trajectories (one is held out)".into(),
            ));
        }
        let m = self.output_dim();
        for sample in data {
            for s in &sample.states {
                self.check_input(s)?;
            }
            if sample.final_reward.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "trajectory reward",
                    expected: m,
                    got: sample.final_reward.len(),
                });
            }
        }

        // Trajectory-level holdout split.
        let mut order: Vec<usize> = (0..data.len()).collect();
        rng.shuffle(&mut order);
        let n_holdout = ((data.len() as f64 * HOLDOUT_FRAC).round() as usize).max(1);
        let (holdout_idx, train_idx) = order.split_at(n_holdout);

        // Flattened training pairs: (trajectory, step), strided.
        let train_pairs: Vec<(usize, usize)> = train_idx
            .iter()
            .flat_map(|&ti| {
                (0..data[ti].states.len())
                    .step_by(cfg.stride)
                    .map(move |t| (ti, t))
            })
            .collect();
        if train_pairs.is_empty() {
            return Err(Error::Domain("stride left no training pairs".into()));
        }

        let mut adam = AdamState::new(self);
        let mut best = Best {
            loss: f64::INFINITY,
            epoch: 0,
            layers: self.layers.clone(),
        };
        let mut report = TrainReport {
            train_loss: Vec::new(),
            holdout_loss: Vec::new(),
            best_epoch: 0,
        };
        let mut pair_order: Vec<usize> = (0..train_pairs.len()).collect();

        for epoch in 0..cfg.max_epochs {
            // Freeze this epoch's bootstrap targets under current parameters.
            let targets = self.frozen_returns(data, cfg.lambda)?;

            rng.shuffle(&mut pair_order);
            let mut epoch_loss = 0.0;
            let mut epoch_terms = 0usize;
            for batch in pair_order.chunks(cfg.batch_size) {
                let states: Vec<&[f64]> = batch
                    .iter()
                    .map(|&p| {
                        let (ti, t) = train_pairs[p];
                        data[ti].states[t].as_slice()
                    })
                    .collect();
                let tgts: Vec<&[f64]> = batch
                    .iter()
                    .map(|&p| {
                        let (ti, t) = train_pairs[p];
                        targets[ti][t].as_slice()
                    })
                    .collect();
                let (loss, grad) = self.mse_param_grad(&states, &tgts)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "value training loss diverged at epoch {epoch}"
                    )));
                }
                adam.update(self, &grad, cfg);
                epoch_loss += loss * (batch.len() * m) as f64;
                epoch_terms += batch.len() * m;
            }
            report.train_loss.push(epoch_loss / epoch_terms as f64);

            // Held-out final-reward loss under the *updated* parameters.
            let holdout = self.holdout_loss(data, holdout_idx)?;
            if !holdout.is_finite() {
                return Err(Error::NonFinite(format!(
                    "held-out loss diverged at epoch {epoch}"
                )));
            }
            report.holdout_loss.push(holdout);
            if holdout < best.loss - cfg.min_delta {
                best.loss = holdout;
                best.epoch = epoch;
                best.layers = self.layers.clone();
            } else if epoch - best.epoch >= cfg.patience {
                break;
            }
        }

        self.layers = best.layers;
        report.best_epoch = best.epoch;
        Ok(report)
    }

    /// λ-weighted returns for every trajectory under current parameters.
    fn frozen_returns(
        &self,
        data: &[TrajectorySample],
        lambda: f64,
    ) -> Result<Vec<Vec<AttributeVector>>> {
        data.iter()
            .map(|sample| {
                let values: Vec<AttributeVector> = sample.states[1..]
                    .iter()
                    .map(|s| self.forward(s))
                    .collect::<Result<_>>()?;
                td_lambda_returns(&values, &sample.final_reward, lambda)
            })
            .collect()
    }

    /// Mean squared error of held-out predictions against the trajectories'
    /// actual final rewards (the λ→1 limit of the return).
    ///
    /// Training targets bootstrap, but model selection must not: a network
    /// close to its own bootstrap targets merely agrees with itself, and
    /// under self-consistency the best "held-out" score goes to a nearly
    /// constant net. Anchoring selection to the real outcome measures what
    /// the function exists to predict.
    fn holdout_loss(&self, data: &[TrajectorySample], holdout_idx: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        let mut terms = 0usize;
        for &ti in holdout_idx {
            let sample = &data[ti];
            for s in &sample.states {
                let v = self.forward(s)?;
                total += v
                    .iter()
                    .zip(&sample.final_reward)
                    .map(|(&v, &r)| (v - r) * (v - r))
                    .sum::<f64>();
                terms += v.len();
            }
        }
        Ok(total / terms as f64)
    }
}

/// Tracked best-so-far snapshot during training.
struct Best {
    loss: f64,
    epoch: usize,
    layers: Vec<Layer>,
}

/// Adam moments over the flat parameter vector.
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn new(vf: &ValueFunction) -> Self {
        let n = vf.param_count();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam step over all parameters.
    fn update(&mut self, vf: &mut ValueFunction, grad: &[f64], cfg: &TdConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let mut i = 0;
        for layer in &mut vf.layers {
            for p in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                let g = grad[i];
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                i += 1;
            }
        }
    }
}

// =============================================================================
// Tests
// =============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Explicit term-by-term expansion of the λ-weighted return — the
    /// independent oracle the recursive implementation is checked against.
    fn returns_by_expansion(
        values: &[AttributeVector],
        final_reward: &AttributeVector,
        lambda: f64,
    ) -> Vec<AttributeVector> {
        let m = final_reward.len();
        let t_len = values.len() + 1;
        (0..t_len)
            .map(|t| {
                (0..m)
                    .map(|i| {
                        let horizon = t_len - 1 - t;
                        let mut acc = 0.0;
                        let mut coef = 1.0; // λ^{n−1}, starting at n = 1
                        for n in 1..=horizon {
                            acc += (1.0 - lambda) * coef * values[t + n - 1][i];
                            coef *= lambda;
                        }
                        // coef is now λ^{horizon}
                        acc + coef * final_reward[i]
                    })
                    .collect()
            })
            .collect()
    }

    fn random_values(rng: &mut Rng, steps: usize, m: usize) -> Vec<AttributeVector> {
        (0..steps)
            .map(|_| (0..m).map(|_| rng.next_f64()).collect())
            .collect()
    }

    #[test]
    fn recursion_matches_expansion_oracle() {
        let mut rng = Rng::new(42);
        for case in 0..1000 {
            let t_len = 1 + rng.below(12);
            let m = 1 + rng.below(3);
            let lambda = rng.next_f64();
            let values = random_values(&mut rng, t_len - 1, m);
            let reward: AttributeVector = (0..m).map(|_| rng.next_f64()).collect();
            let got = td_lambda_returns(&values, &reward, lambda).unwrap();
            let want = returns_by_expansion(&values, &reward, lambda);
            for (g_row, w_row) in got.iter().zip(&want) {
                for (g, w) in g_row.iter().zip(w_row) {
                    assert!(
                        (g - w).abs() <= 1e-12,
                        "case {case}: recursion {g} vs expansion {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn lambda_endpoints() {
        let values = vec![vec![0.3], vec![0.6], vec![0.9]];
        let reward = vec![0.5];
        // λ = 1: every step's return is the final reward.
        let mc = td_lambda_returns(&values, &reward, 1.0).unwrap();
        assert_eq!(mc, vec![vec![0.5]; 4]);
        // λ = 0: each step bootstraps from its immediate successor.
        let one_step = td_lambda_returns(&values, &reward, 0.0).unwrap();
        assert_eq!(one_step, vec![vec![0.3], vec![0.6], vec![0.9], vec![0.5]]);
    }

    #[test]
    fn single_step_trajectory_returns_reward() {
        let got = td_lambda_returns(&[], &vec![0.25, 0.75], 0.7).unwrap();
        assert_eq!(got, vec![vec![0.25, 0.75]]);
    }

    #[test]
    fn returns_reject_bad_inputs() {
        assert!(td_lambda_returns(&[], &vec![0.5], 1.5).is_err());
        assert!(td_lambda_returns(&[], &vec![0.5], -0.1).is_err());
        assert!(td_lambda_returns(&[vec![0.5, 0.5]], &vec![0.5], 0.5).is_err());
        assert!(td_lambda_returns(&[], &vec![], 0.5).is_err());
    }

    proptest! {
        // The return is a convex combination of its ingredients: with all
        // values and the reward equal to c, every G_t equals c.
        #[test]
        fn returns_are_convex_combinations(
            c in 0.0f64..=1.0,
            lambda in 0.0f64..=1.0,
            steps in 1usize..10,
        ) {
            let values = vec![vec![c]; steps - 1];
            let returns = td_lambda_returns(&values, &vec![c], lambda).unwrap();
            for g in &returns {
                prop_assert!((g[0] - c).abs() <= 1e-12);
            }
        }

        // Returns always stay inside the hull of the inputs.
        #[test]
        fn returns_stay_in_input_hull(
            lambda in 0.0f64..=1.0,
            seed in 0u64..500,
        ) {
            let mut rng = Rng::new(seed);
            let t_len = 2 + rng.below(8);
            let values = random_values(&mut rng, t_len - 1, 1);
            let reward = vec![rng.next_f64()];
            let lo = values.iter().map(|v| v[0]).chain([reward[0]])
                .fold(f64::INFINITY, f64::min);
            let hi = values.iter().map(|v| v[0]).chain([reward[0]])
                .fold(f64::NEG_INFINITY, f64::max);
            for g in td_lambda_returns(&values, &reward, lambda).unwrap() {
                prop_assert!(g[0] >= lo - 1e-12 && g[0] <= hi + 1e-12);
            }
        }
    }

    // -------------------------------------------------------------------------
    // Network and gradients
    // -------------------------------------------------------------------------

    fn small_vf(seed: u64) -> ValueFunction {
        ValueFunction::init(&[6, 8, 5, 2], &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn forward_outputs_are_probabilities() {
        let vf = small_vf(1);
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let h: Vec<f64> = (0..6).map(|_| rng.uniform(-3.0, 3.0)).collect();
            for v in vf.forward(&h).unwrap() {
                assert!(v > 0.0 && v < 1.0);
            }
        }
        assert!(vf.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let vf = small_vf(3);
        let rebuilt = ValueFunction::from_flat(vf.dims(), &vf.to_flat()).unwrap();
        assert_eq!(vf, rebuilt);
        assert!(ValueFunction::from_flat(&[6, 2], &[0.0; 3]).is_err());
    }

    /// Central finite differences over every parameter of the frozen-target
    /// MSE. ε = 1e-5 per the documented gradient-check recipe.
    #[test]
    fn param_gradient_matches_finite_differences() {
        let vf = small_vf(4);
        let mut rng = Rng::new(5);
        let states: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.next_f64()).collect())
            .collect();
        let state_refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let target_refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();

        let (_, analytic) = vf.mse_param_grad(&state_refs, &target_refs).unwrap();
        let flat = vf.to_flat();
        let eps = 1e-5;
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let lp = ValueFunction::from_flat(vf.dims(), &plus)
                .unwrap()
                .mse_loss(&state_refs, &target_refs)
                .unwrap();
            let lm = ValueFunction::from_flat(vf.dims(), &minus)
                .unwrap()
                .mse_loss(&state_refs, &target_refs)
                .unwrap();
            let numeric = (lp - lm) / (2.0 * eps);
            let rel = (numeric - analytic[i]).abs() / (numeric.abs() + analytic[i].abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "param {i}: analytic {:.3e} vs numeric {numeric:.3e} (rel {rel:.3e})",
                analytic[i]
            );
        }
    }

    /// Central finite differences over the input state for the steering
    /// objective gradient.
    #[test]
    fn input_gradient_matches_finite_differences() {
        let vf = small_vf(6);
        let mut rng = Rng::new(7);
        let target = TargetVector::new(vec![0.8, 0.2], vec![1.0, 2.5]).unwrap();
        for _ in 0..10 {
            let h: Vec<f64> = (0..6).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let (loss, grad) = vf.grad_wrt_input(&h, &target).unwrap();
            assert!(loss >= 0.0);
            let eps = 1e-5;
            for i in 0..h.len() {
                let mut plus = h.clone();
                plus[i] += eps;
                let mut minus = h.clone();
                minus[i] -= eps;
                let lp = crate::attr::weighted_target_loss(&vf.forward(&plus).unwrap(), &target)
                    .unwrap();
                let lm = crate::attr::weighted_target_loss(&vf.forward(&minus).unwrap(), &target)
                    .unwrap();
                let numeric = (lp - lm) / (2.0 * eps);
                let rel = (numeric - grad[i]).abs() / (numeric.abs() + grad[i].abs()).max(1e-8);
                assert!(rel < 1e-4, "input {i}: rel error {rel:.3e}");
            }
        }
    }

    #[test]
    fn weighted_sum_gradient_matches_finite_differences() {
        let vf = small_vf(8);
        let mut rng = Rng::new(9);
        let weights = vec![1.0, 0.5];
        let h: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (value, grad) = vf.grad_weighted_sum(&h, &weights).unwrap();
        let direct: f64 = vf
            .forward(&h)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|(&v, &w)| w * v)
            .sum();
        assert_abs_diff_eq!(value, direct, epsilon = 1e-12);
        let eps = 1e-5;
        for i in 0..h.len() {
            let mut plus = h.clone();
            plus[i] += eps;
            let mut minus = h.clone();
            minus[i] -= eps;
            let f = |h: &[f64]| -> f64 {
                vf.forward(h)
                    .unwrap()
                    .iter()
                    .zip(&weights)
                    .map(|(&v, &w)| w * v)
                    .sum()
            };
            let numeric = (f(&plus) - f(&minus)) / (2.0 * eps);
            let rel = (numeric - grad[i]).abs() / (numeric.abs() + grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "input {i}: rel error {rel:.3e}");
        }
    }

    // -------------------------------------------------------------------------
    // Training behaviour
    // -------------------------------------------------------------------------

    fn constant_reward_dataset(n: usize, reward: f64, rng: &mut Rng) -> Vec<TrajectorySample> {
        (0..n)
            .map(|_| {
                let t_len = 3 + rng.below(6);
                let states = (0..t_len)
                    .map(|_| (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect())
                    .collect();
                TrajectorySample::new(states, vec![reward, reward]).unwrap()
            })
            .collect()
    }

    #[test]
    fn monte_carlo_mode_regresses_to_constant() {
        // λ = 1 pins every step's target to the final reward, so training on
        // a constant-reward dataset must regress predictions to it.
        let mut rng = Rng::new(10);
        let data = constant_reward_dataset(60, 0.5, &mut rng);
        let mut vf = small_vf(11);
        let cfg = TdConfig {
            lambda: 1.0,
            lr: 3e-3,
            max_epochs: 150,
            ..TdConfig::default()
        };
        vf.train(&data, &cfg, &mut Rng::new(12)).unwrap();
        let mut probe = Rng::new(13);
        for _ in 0..30 {
            let h: Vec<f64> = (0..6).map(|_| probe.uniform(-1.0, 1.0)).collect();
            for v in vf.forward(&h).unwrap() {
                assert!((v - 0.5).abs() <= 0.02, "prediction {v} strays from 0.5");
            }
        }
    }

    #[test]
    fn training_reduces_holdout_loss_on_learnable_signal() {
        // Rewards depend linearly on a state feature: the network must beat
        // its initial held-out loss.
        let mut rng = Rng::new(14);
        let data: Vec<TrajectorySample> = (0..80)
            .map(|_| {
                let strength = rng.next_f64();
                let t_len = 3 + rng.below(5);
                let states: Vec<Vec<f64>> = (0..t_len)
                    .map(|_| {
                        (0..6)
                            .map(|d| {
                                if d == 0 {
                                    strength * 2.0 - 1.0
                                } else {
                                    rng.uniform(-1.0, 1.0)
                                }
                            })
                            .collect()
                    })
                    .collect();
                TrajectorySample::new(states, vec![strength, 1.0 - strength]).unwrap()
            })
            .collect();
        let mut vf = small_vf(15);
        let cfg = TdConfig {
            lambda: 0.9,
            lr: 2e-3,
            max_epochs: 50,
            ..TdConfig::default()
        };
        let report = vf.train(&data, &cfg, &mut Rng::new(16)).unwrap();
        let first = report.holdout_loss[0];
        let best = report
            .holdout_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            best < first * 0.5,
            "held-out loss failed to improve: first {first:.4}, best {best:.4}"
        );
        assert!(report.train_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn early_stopping_respects_patience() {
        let mut rng = Rng::new(17);
        let data = constant_reward_dataset(20, 0.5, &mut rng);
        let mut vf = small_vf(18);
        // A tiny learning rate cannot clear the improvement threshold, so
        // patience must cut training well short of max_epochs.
        let cfg = TdConfig {
            lambda: 1.0,
            lr: 1e-5,
            max_epochs: 100,
            patience: 3,
            min_delta: 1e-3,
            ..TdConfig::default()
        };
        let report = vf.train(&data, &cfg, &mut Rng::new(19)).unwrap();
        assert!(
            report.train_loss.len() <= 1 + cfg.patience,
            "expected a stop after ~patience epochs, ran {}",
            report.train_loss.len()
        );
        assert_eq!(report.train_loss.len(), report.holdout_loss.len());
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let mut vf = small_vf(20);
        let cfg = TdConfig::default();
        assert!(vf.train(&[], &cfg, &mut Rng::new(0)).is_err());

        let mut rng = Rng::new(21);
        let one = constant_reward_dataset(1, 0.5, &mut rng);
        assert!(vf.train(&one, &cfg, &mut Rng::new(0)).is_err());

        let bad_cfg = TdConfig {
            lambda: 2.0,
            ..TdConfig::default()
        };
        let data = constant_reward_dataset(4, 0.5, &mut rng);
        assert!(vf.train(&data, &bad_cfg, &mut Rng::new(0)).is_err());

        // Reward width must match the head count.
        let mismatch =
            vec![TrajectorySample::new(vec![vec![0.0; 6]], vec![0.5]).unwrap(); 4];
        assert!(vf.train(&mismatch, &cfg, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn trajectory_sample_validation() {
        assert!(TrajectorySample::new(vec![], vec![0.5]).is_err());
        assert!(TrajectorySample::new(vec![vec![0.0; 3], vec![0.0; 4]], vec![0.5]).is_err());
        assert!(TrajectorySample::new(vec![vec![0.0; 3]], vec![1.5]).is_err());
        assert!(TrajectorySample::new(vec![vec![0.0; 3]], vec![]).is_err());
    }
}
