//! Elman-style recurrent token generator with exposed hidden states.
//!
//! The model is deliberately small — embedding, one tanh recurrence, linear
//! output head — because its job is to be a *transparent* testbed: every
//! decoding step surfaces the hidden state so downstream code can read it,
//! edit it, and observe the causal effect on the tokens that follow.
//!
//! ## Recurrence
//!
//! ```text
//! next_state = tanh(W_h · state + W_x · embed(token) + b_h)
//! logits     = W_o · next_state + b_o
//! ```
//!
//! ## Decoding loop
//!
//! Generation consumes the prompt through the recurrence, then repeatedly:
//! applies the optional steering hook to the current state, computes logits
//! from the *post-hook* state, samples a token, and feeds the post-hook
//! state into the next recurrence step. The recorded per-step hidden states
//! are therefore exactly the states that produced each token.
//!
//! Token ids 0–2 are reserved: 0 ends a sequence, 1 begins one (used when
//! the prompt is empty), and 2 separates rounds in multi-round prompts.

use serde::{Deserialize, Serialize};

use crate::attr::AttributeVector;
use crate::error::Error;
use crate::rng::Rng;
use crate::Result;

/// Sequence terminator; sampling it ends generation.
pub const EOS: u32 = 0;
/// Sequence opener; substituted when a prompt is empty.
pub const BOS: u32 = 1;
/// Round separator for composed multi-round prompts.
pub const SEP: u32 = 2;

// =============================================================================
// Configuration
// =============================================================================

/// Architecture and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Vocabulary size including the three reserved ids; at least 4.
    pub vocab_size: usize,
    /// Width of the recurrent state.
    pub hidden_dim: usize,
    /// Width of the token embedding.
    pub embed_dim: usize,
    /// Hard cap on generated tokens per call.
    pub max_len: usize,
    /// Softmax temperature; `0.0` selects argmax (greedy) decoding.
    pub temperature: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            vocab_size: 64,
            hidden_dim: 32,
            embed_dim: 16,
            max_len: 48,
            temperature: 1.0,
        }
    }
}

impl GeneratorConfig {
    /// Checks dimensional and sampling invariants.
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be at least 4 (3 reserved ids + content), got {}",
                self.vocab_size
            )));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim, embed_dim, and max_len must all be at least 1".into(),
            ));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be finite and >= 0 (0 = argmax), got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Pretraining hyperparameters for [`Generator::pretrain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    /// Full passes over the corpus.
    pub epochs: usize,
    /// Plain gradient-descent step size.
    pub lr: f64,
    /// Sequences per parameter update.
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            lr: 0.5,
            batch_size: 32,
        }
    }
}

impl PretrainConfig {
    /// Checks optimizer invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "pretrain lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("pretrain batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

// =============================================================================
// Records
// =============================================================================

/// Per-step steering summary attached to steered records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerStepSummary {
    /// Gradient updates applied to the hidden state at this step.
    pub updates_applied: usize,
    /// Objective value of the state that was kept.
    pub final_objective: f64,
}

/// One generation with everything needed to score, evaluate, and retrain.
///
/// Hidden states are not serialized: for unsteered records they are
/// recomputable via [`Generator::replay_states`], and nothing downstream of
/// serialization consumes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    /// Identifier aligning this record with its prompt across record sets.
    pub prompt_id: usize,
    /// Tokens consumed before decoding began.
    pub prompt_tokens: Vec<u32>,
    /// Tokens produced, in order; includes the terminator if one was sampled.
    pub output_tokens: Vec<u32>,
    /// Post-hook hidden state per generated token (same length as
    /// `output_tokens`).
    #[serde(skip, default)]
    pub hidden_states: Vec<Vec<f64>>,
    /// Raw-scale attribute scores, once scored.
    pub raw_scores: Option<AttributeVector>,
    /// Normalized attribute scores, once scored.
    pub norm_scores: Option<AttributeVector>,
    /// Per-step steering summaries, when generation was steered.
    pub steer_trace: Option<Vec<SteerStepSummary>>,
    /// True when a composed multi-round prompt had to be truncated.
    pub context_truncated: bool,
}

/// One recurrence advance: the new state and the logits it induces.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `tanh(W_h · state + W_x · embed(token) + b_h)`.
    pub next_state: Vec<f64>,
    /// `W_o · next_state + b_o`.
    pub logits: Vec<f64>,
}

/// Mutation applied to the hidden state before each step's logits.
pub type StateHook<'a> = &'a mut dyn FnMut(usize, &mut Vec<f64>);

// =============================================================================
// Model
// =============================================================================

/// Recurrent generator. Parameters are stored row-major as flat `f64`
/// buffers in the fixed layout `[embed, w_h, w_x, b_h, w_o, b_o]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    /// Token embeddings, `vocab_size × embed_dim`.
    embed: Vec<f64>,
    /// Recurrent weights, `hidden_dim × hidden_dim`.
    w_h: Vec<f64>,
    /// Input weights, `hidden_dim × embed_dim`.
    w_x: Vec<f64>,
    /// Recurrence bias, `hidden_dim`.
    b_h: Vec<f64>,
    /// Output head, `vocab_size × hidden_dim`.
    w_o: Vec<f64>,
    /// Output bias, `vocab_size`.
    b_o: Vec<f64>,
}

/// `y = W · x` for a row-major `rows × cols` matrix.
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for (r, y_r) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *y_r = row.iter().zip(x).map(|(&w, &x)| w * x).sum();
    }
    y
}

/// `y = Wᵀ · x` for a row-major `rows × cols` matrix.
fn matvec_t(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    let mut y = vec![0.0; cols];
    for r in 0..rows {
        let row = &w[r * cols..(r + 1) * cols];
        let x_r = x[r];
        for (y_c, &w_rc) in y.iter_mut().zip(row) {
            *y_c += w_rc * x_r;
        }
    }
    y
}

impl Generator {
    /// Initializes parameters from a scaled-uniform distribution: every
    /// matrix (and its bias) draws from `±1/√fan_in`, embeddings from
    /// `±0.5`. Biases are drawn rather than zeroed so that independently
    /// seeded models differ in every coordinate.
    pub fn init(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let (v, h, e) = (config.vocab_size, config.hidden_dim, config.embed_dim);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.uniform(-scale, scale)).collect()
        };
        let s_h = 1.0 / (h as f64).sqrt();
        let s_e = 1.0 / (e as f64).sqrt();
        Ok(Generator {
            embed: draw(v * e, 0.5),
            w_h: draw(h * h, s_h),
            w_x: draw(h * e, s_e),
            b_h: draw(h, s_h),
            w_o: draw(v * h, s_h),
            b_o: draw(v, s_h),
            config,
        })
    }

    /// The architecture this model was built with.
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Width of the recurrent state.
    pub fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    /// Total parameter count:
    /// `vocab·embed + hidden² + hidden·embed + hidden + vocab·hidden + vocab`.
    pub fn param_count(&self) -> usize {
        let (v, h, e) = (
            self.config.vocab_size,
            self.config.hidden_dim,
            self.config.embed_dim,
        );
        v * e + h * h + h * e + h + v * h + v
    }

    /// Flattens all parameters in the documented layout
    /// `[embed, w_h, w_x, b_h, w_o, b_o]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for part in [&self.embed, &self.w_h, &self.w_x, &self.b_h, &self.w_o, &self.b_o] {
            flat.extend_from_slice(part);
        }
        flat
    }

    /// Rebuilds a model from a flat parameter buffer in the layout produced
    /// by [`Generator::to_flat`].
    pub fn from_flat(config: GeneratorConfig, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        let (v, h, e) = (config.vocab_size, config.hidden_dim, config.embed_dim);
        let expected = v * e + h * h + h * e + h + v * h + v;
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "Generator::from_flat",
                expected,
                got: flat.len(),
            });
        }
        let mut rest = flat;
        let mut take = |n: usize| -> Vec<f64> {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        Ok(Generator {
            embed: take(v * e),
            w_h: take(h * h),
            w_x: take(h * e),
            b_h: take(h),
            w_o: take(v * h),
            b_o: take(v),
            config,
        })
    }

    fn check_token(&self, token: u32) -> Result<()> {
        if (token as usize) >= self.config.vocab_size {
            return Err(Error::Domain(format!(
                "token id {} is outside the vocabulary (size {})",
                token, self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embedding(&self, token: u32) -> &[f64] {
        let e = self.config.embed_dim;
        let t = token as usize;
        &self.embed[t * e..(t + 1) * e]
    }

    /// Recurrence only: `tanh(W_h · state + W_x · embed(token) + b_h)`.
    fn recur(&self, state: &[f64], token: u32) -> Vec<f64> {
        let h = self.config.hidden_dim;
        let mut pre = matvec(&self.w_h, h, h, state);
        let from_input = matvec(&self.w_x, h, self.config.embed_dim, self.embedding(token));
        for ((p, x), b) in pre.iter_mut().zip(&from_input).zip(&self.b_h) {
            *p = (*p + x + b).tanh();
        }
        pre
    }

    /// Output head: `W_o · state + b_o`.
    pub fn output_logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        let h = self.config.hidden_dim;
        if state.len() != h {
            return Err(Error::DimensionMismatch {
                context: "Generator::output_logits",
                expected: h,
                got: state.len(),
            });
        }
        let mut logits = matvec(&self.w_o, self.config.vocab_size, h, state);
        for (l, b) in logits.iter_mut().zip(&self.b_o) {
            *l += b;
        }
        Ok(logits)
    }

    /// Advances one token, returning both the next state and its logits.
    ///
    /// # Errors
    ///
    /// Fails on a state of the wrong width or a token outside the vocabulary.
    pub fn step(&self, state: &[f64], token: u32) -> Result<StepOutput> {
        if state.len() != self.config.hidden_dim {
            return Err(Error::DimensionMismatch {
                context: "Generator::step",
                expected: self.config.hidden_dim,
                got: state.len(),
            });
        }
        self.check_token(token)?;
        let next_state = self.recur(state, token);
        let logits = self.output_logits(&next_state)?;
        Ok(StepOutput { next_state, logits })
    }

    /// Samples one token id from `softmax(logits / temperature)`; a zero
    /// temperature takes the argmax (ties resolve to the lowest id).
    fn sample_token(&self, logits: &[f64], rng: &mut Rng) -> Result<u32> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("generator logits".into()));
        }
        let temp = self.config.temperature;
        if temp == 0.0 {
            let argmax = logits
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &l)| {
                    if l > best.1 {
                        (i, l)
                    } else {
                        best
                    }
                });
            return Ok(argmax.0 as u32);
        }
        // Numerically stable softmax over scaled logits.
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temp).collect();
        let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scaled.iter().map(|&l| (l - max).exp()).collect();
        Ok(rng.categorical(&weights) as u32)
    }

    /// Generates up to `max_len` tokens after consuming `prompt`.
    ///
    /// An empty prompt is replaced by `[BOS]`. When `hook` is supplied it
    /// rewrites the hidden state *before* the step's logits are computed,
    /// and the rewritten state is what the next recurrence step consumes.
    /// Generation stops after sampling the terminator (which is recorded)
    /// or after `max_len` tokens.
    ///
    /// # Errors
    ///
    /// Fails on out-of-vocabulary prompt tokens or non-finite logits.
    pub fn generate(
        &self,
        prompt: &[u32],
        rng: &mut Rng,
        mut hook: Option<StateHook<'_>>,
    ) -> Result<GenerationRecord> {
        let effective: &[u32] = if prompt.is_empty() { &[BOS] } else { prompt };
        for &t in effective {
            self.check_token(t)?;
        }

        let mut state = vec![0.0; self.config.hidden_dim];
        for &t in effective {
            state = self.recur(&state, t);
        }

        let mut output_tokens = Vec::new();
        let mut hidden_states = Vec::new();
        for step_idx in 0..self.config.max_len {
            if let Some(hook) = hook.as_mut() {
                hook(step_idx, &mut state);
                if state.len() != self.config.hidden_dim {
                    return Err(Error::DimensionMismatch {
                        context: "steering hook output",
                        expected: self.config.hidden_dim,
                        got: state.len(),
                    });
                }
            }
            let logits = self.output_logits(&state)?;
            let token = self.sample_token(&logits, rng)?;
            output_tokens.push(token);
            hidden_states.push(state.clone());
            if token == EOS {
                break;
            }
            state = self.recur(&state, token);
        }

        Ok(GenerationRecord {
            prompt_id: 0,
            prompt_tokens: prompt.to_vec(),
            output_tokens,
            hidden_states,
            raw_scores: None,
            norm_scores: None,
            steer_trace: None,
            context_truncated: false,
        })
    }

    /// Recomputes the per-step hidden states of an *unsteered* generation by
    /// teacher-forcing `output` after `prompt`. Matches
    /// [`GenerationRecord::hidden_states`] exactly when no hook was used.
    pub fn replay_states(&self, prompt: &[u32], output: &[u32]) -> Result<Vec<Vec<f64>>> {
        let effective: &[u32] = if prompt.is_empty() { &[BOS] } else { prompt };
        for &t in effective.iter().chain(output) {
            self.check_token(t)?;
        }
        let mut state = vec![0.0; self.config.hidden_dim];
        for &t in effective {
            state = self.recur(&state, t);
        }
        let mut states = Vec::with_capacity(output.len());
        for &t in output.iter().take(output.len().saturating_sub(1)) {
            states.push(state.clone());
            state = self.recur(&state, t);
        }
        if !output.is_empty() {
            states.push(state);
        }
        Ok(states)
    }

    // -------------------------------------------------------------------------
    // Pretraining
    // -------------------------------------------------------------------------

    /// Mean next-token cross-entropy (nats per predicted token) over a corpus.
    pub fn mean_cross_entropy(&self, corpus: &[Vec<u32>]) -> Result<f64> {
        let mut total = 0.0;
        let mut positions = 0usize;
        for seq in corpus {
            let (loss, pos) = self.sequence_loss(seq)?;
            total += loss;
            positions += pos;
        }
        if positions == 0 {
            return Err(Error::Domain(
                "corpus has no predictable positions (all sequences shorter than 2)".into(),
            ));
        }
        Ok(total / positions as f64)
    }

    /// Summed cross-entropy and predicted-position count for one sequence.
    fn sequence_loss(&self, seq: &[u32]) -> Result<(f64, usize)> {
        if seq.is_empty() {
            return Err(Error::Domain("corpus sequence is empty".into()));
        }
        for &t in seq {
            self.check_token(t)?;
        }
        let mut state = vec![0.0; self.config.hidden_dim];
        let mut loss = 0.0;
        for t in 0..seq.len() - 1 {
            state = self.recur(&state, seq[t]);
            let logits = self.output_logits(&state)?;
            loss -= log_softmax_at(&logits, seq[t + 1] as usize);
        }
        Ok((loss, seq.len() - 1))
    }

    /// Fits the model to `corpus` with mini-batch gradient descent on
    /// next-token cross-entropy. Returns the per-epoch mean loss (nats per
    /// predicted token, averaged over the batches of that epoch).
    ///
    /// # Errors
    ///
    /// Fails on invalid hyperparameters, an empty or malformed corpus, or a
    /// non-finite loss (reported with the epoch at which training diverged).
    pub fn pretrain(
        &mut self,
        corpus: &[Vec<u32>],
        cfg: &PretrainConfig,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::Domain("pretraining corpus is empty".into()));
        }
        for seq in corpus {
            if seq.is_empty() {
                return Err(Error::Domain("corpus sequence is empty".into()));
            }
            for &t in seq {
                self.check_token(t)?;
            }
        }

        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            rng.shuffle(&mut order);
            let mut epoch_loss_sum = 0.0;
            let mut epoch_positions = 0usize;
            for batch in order.chunks(cfg.batch_size) {
                let mut grads = Grads::zeros_like(self);
                let mut batch_loss = 0.0;
                let mut batch_positions = 0usize;
                for &i in batch {
                    let (loss, pos) = self.accumulate_sequence_grads(&corpus[i], &mut grads)?;
                    batch_loss += loss;
                    batch_positions += pos;
                }
                if batch_positions == 0 {
                    continue; // batch of length-1 sequences: nothing to learn from
                }
                if !batch_loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "pretraining loss diverged at epoch {epoch}"
                    )));
                }
                let scale = cfg.lr / batch_positions as f64;
                grads.apply(self, scale);
                epoch_loss_sum += batch_loss;
                epoch_positions += batch_positions;
            }
            if epoch_positions == 0 {
                return Err(Error::Domain(
                    "corpus has no predictable positions (all sequences shorter than 2)".into(),
                ));
            }
            epoch_losses.push(epoch_loss_sum / epoch_positions as f64);
        }
        Ok(epoch_losses)
    }

    /// Backpropagation through time for one sequence; adds raw (unscaled)
    /// gradient sums into `grads` and returns the summed loss and position
    /// count.
    fn accumulate_sequence_grads(&self, seq: &[u32], grads: &mut Grads) -> Result<(f64, usize)> {
        let positions = seq.len().saturating_sub(1);
        if positions == 0 {
            return Ok((0.0, 0));
        }
        let h = self.config.hidden_dim;
        let e = self.config.embed_dim;
        let v = self.config.vocab_size;

        // Forward pass, caching each step's state and softmax.
        let mut states = Vec::with_capacity(positions);
        let mut probs = Vec::with_capacity(positions);
        let mut state = vec![0.0; h];
        let mut loss = 0.0;
        for t in 0..positions {
            state = self.recur(&state, seq[t]);
            let logits = self.output_logits(&state)?;
            let p = softmax(&logits);
            loss -= p[seq[t + 1] as usize].max(f64::MIN_POSITIVE).ln();
            states.push(state.clone());
            probs.push(p);
        }

        // Backward pass.
        let mut d_next = vec![0.0; h]; // ∂L/∂h_t flowing back through W_h
        for t in (0..positions).rev() {
            // d logits = softmax − one-hot(target)
            let mut d_logits = probs[t].clone();
            d_logits[seq[t + 1] as usize] -= 1.0;

            for r in 0..v {
                let g = d_logits[r];
                if g != 0.0 {
                    let row = &mut grads.w_o[r * h..(r + 1) * h];
                    for (gw, &s) in row.iter_mut().zip(&states[t]) {
                        *gw += g * s;
                    }
                }
                grads.b_o[r] += g;
            }

            let mut d_h = matvec_t(&self.w_o, v, h, &d_logits);
            for (dh, dn) in d_h.iter_mut().zip(&d_next) {
                *dh += dn;
            }
            // Through tanh: d pre-activation = d_h ⊙ (1 − h²)
            let d_a: Vec<f64> = d_h
                .iter()
                .zip(&states[t])
                .map(|(&dh, &s)| dh * (1.0 - s * s))
                .collect();

            if t > 0 {
                let prev = &states[t - 1];
                for r in 0..h {
                    let g = d_a[r];
                    let row = &mut grads.w_h[r * h..(r + 1) * h];
                    for (gw, &s) in row.iter_mut().zip(prev) {
                        *gw += g * s;
                    }
                }
            } // h_{-1} = 0 contributes nothing to w_h

            let emb = self.embedding(seq[t]);
            for r in 0..h {
                let g = d_a[r];
                let row = &mut grads.w_x[r * e..(r + 1) * e];
                for (gw, &x) in row.iter_mut().zip(emb) {
                    *gw += g * x;
                }
                grads.b_h[r] += g;
            }

            let d_emb = matvec_t(&self.w_x, h, e, &d_a);
            let erow = &mut grads.embed[seq[t] as usize * e..(seq[t] as usize + 1) * e];
            for (ge, de) in erow.iter_mut().zip(&d_emb) {
                *ge += de;
            }

            d_next = matvec_t(&self.w_h, h, h, &d_a);
        }
        Ok((loss, positions))
    }
}

/// Softmax with the max subtracted for stability.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(logits)[index]`, computed stably.
fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    logits[index] - max - log_sum
}

/// Gradient accumulator mirroring the parameter layout.
struct Grads {
    embed: Vec<f64>,
    w_h: Vec<f64>,
    w_x: Vec<f64>,
    b_h: Vec<f64>,
    w_o: Vec<f64>,
    b_o: Vec<f64>,
}

impl Grads {
    fn zeros_like(gen: &Generator) -> Self {
        Grads {
            embed: vec![0.0; gen.embed.len()],
            w_h: vec![0.0; gen.w_h.len()],
            w_x: vec![0.0; gen.w_x.len()],
            b_h: vec![0.0; gen.b_h.len()],
            w_o: vec![0.0; gen.w_o.len()],
            b_o: vec![0.0; gen.b_o.len()],
        }
    }

    /// `θ ← θ − scale · g` for every parameter.
    fn apply(&self, gen: &mut Generator, scale: f64) {
        for (param, grad) in [
            (&mut gen.embed, &self.embed),
            (&mut gen.w_h, &self.w_h),
            (&mut gen.w_x, &self.w_x),
            (&mut gen.b_h, &self.b_h),
            (&mut gen.w_o, &self.w_o),
            (&mut gen.b_o, &self.b_o),
        ] {
            for (p, &g) in param.iter_mut().zip(grad) {
                *p -= scale * g;
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

    fn small_config() -> GeneratorConfig {
        GeneratorConfig {
            vocab_size: 16,
            hidden_dim: 12,
            embed_dim: 8,
            max_len: 20,
            temperature: 1.0,
        }
    }

    #[test]
    fn param_count_matches_formula_at_defaults() {
        let gen = Generator::init(GeneratorConfig::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(
            gen.param_count(),
            64 * 16 + 32 * 32 + 16 * 32 + 32 + 32 * 64 + 64
        );
        assert_eq!(gen.to_flat().len(), gen.param_count());
    }

    #[test]
    fn zero_state_step_is_finite() {
        let gen = Generator::init(small_config(), &mut Rng::new(1)).unwrap();
        let out = gen.step(&vec![0.0; 12], 5).unwrap();
        assert!(out.next_state.iter().all(|x| x.is_finite()));
        assert!(out.logits.iter().all(|x| x.is_finite()));
        assert_eq!(out.next_state.len(), 12);
        assert_eq!(out.logits.len(), 16);
    }

    #[test]
    fn step_rejects_bad_shapes_and_tokens() {
        let gen = Generator::init(small_config(), &mut Rng::new(1)).unwrap();
        assert!(gen.step(&vec![0.0; 5], 3).is_err());
        assert!(gen.step(&vec![0.0; 12], 16).is_err());
        assert!(gen.generate(&[3, 99], &mut Rng::new(0), None).is_err());
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let gen = Generator::init(small_config(), &mut Rng::new(2)).unwrap();
        let a = gen.generate(&[3, 4, 5], &mut Rng::new(7), None).unwrap();
        let b = gen.generate(&[3, 4, 5], &mut Rng::new(7), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_seeds_give_distinct_parameters() {
        let a = Generator::init(GeneratorConfig::default(), &mut Rng::new(10)).unwrap();
        let b = Generator::init(GeneratorConfig::default(), &mut Rng::new(11)).unwrap();
        let (fa, fb) = (a.to_flat(), b.to_flat());
        let differing = fa.iter().zip(&fb).filter(|(x, y)| x != y).count();
        // Continuous init: essentially every entry should differ.
        assert!(
            differing as f64 >= 0.99 * fa.len() as f64,
            "only {differing}/{} parameters differ",
            fa.len()
        );
    }

    #[test]
    fn greedy_mode_ignores_the_rng() {
        let mut cfg = small_config();
        cfg.temperature = 0.0;
        let gen = Generator::init(cfg, &mut Rng::new(3)).unwrap();
        let a = gen.generate(&[4], &mut Rng::new(1), None).unwrap();
        let b = gen.generate(&[4], &mut Rng::new(999), None).unwrap();
        assert_eq!(a.output_tokens, b.output_tokens);
    }

    #[test]
    fn record_invariants_hold() {
        let gen = Generator::init(small_config(), &mut Rng::new(4)).unwrap();
        for seed in 0..20 {
            let rec = gen.generate(&[5, 6], &mut Rng::new(seed), None).unwrap();
            assert!(!rec.output_tokens.is_empty());
            assert!(rec.output_tokens.len() <= 20);
            assert_eq!(rec.hidden_states.len(), rec.output_tokens.len());
            assert!(rec.output_tokens.iter().all(|&t| (t as usize) < 16));
            // The terminator, if present, is final.
            if let Some(pos) = rec.output_tokens.iter().position(|&t| t == EOS) {
                assert_eq!(pos, rec.output_tokens.len() - 1);
            }
        }
    }

    #[test]
    fn empty_prompt_means_begin_token() {
        let gen = Generator::init(small_config(), &mut Rng::new(5)).unwrap();
        let empty = gen.generate(&[], &mut Rng::new(9), None).unwrap();
        let begin = gen.generate(&[BOS], &mut Rng::new(9), None).unwrap();
        assert_eq!(empty.output_tokens, begin.output_tokens);
        assert_eq!(empty.prompt_tokens, Vec::<u32>::new());
    }

    #[test]
    fn hook_state_feeds_both_logits_and_next_step() {
        let gen = Generator::init(small_config(), &mut Rng::new(6)).unwrap();
        let pinned = vec![0.3; 12];
        let mut hook = |_: usize, state: &mut Vec<f64>| *state = pinned.clone();
        let rec = gen
            .generate(&[5], &mut Rng::new(0), Some(&mut hook))
            .unwrap();
        // Recorded states are the post-hook states.
        for s in &rec.hidden_states {
            assert_eq!(s, &pinned);
        }
        // With the state pinned, every step has identical logits, so a
        // greedy re-derivation from the pinned state predicts each token's
        // distribution; verify the first step's logits directly.
        let expect = gen.output_logits(&pinned).unwrap();
        let direct = gen.output_logits(&rec.hidden_states[0]).unwrap();
        assert_eq!(expect, direct);
    }

    #[test]
    fn replay_matches_unsteered_states() {
        let gen = Generator::init(small_config(), &mut Rng::new(7)).unwrap();
        let rec = gen.generate(&[3, 8, 2], &mut Rng::new(21), None).unwrap();
        let replayed = gen
            .replay_states(&rec.prompt_tokens, &rec.output_tokens)
            .unwrap();
        assert_eq!(replayed, rec.hidden_states);
    }

    #[test]
    fn flat_round_trip_preserves_model() {
        let gen = Generator::init(small_config(), &mut Rng::new(8)).unwrap();
        let rebuilt = Generator::from_flat(gen.config().clone(), &gen.to_flat()).unwrap();
        assert_eq!(gen, rebuilt);
        assert!(Generator::from_flat(small_config(), &[0.0; 3]).is_err());
    }

    #[test]
    fn config_validation_rejects_degenerate_setups() {
        let mut cfg = small_config();
        cfg.vocab_size = 3;
        assert!(Generator::init(cfg, &mut Rng::new(0)).is_err());
        let mut cfg = small_config();
        cfg.temperature = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.max_len = 0;
        assert!(cfg.validate().is_err());
    }

    // -------------------------------------------------------------------------
    // Training behaviour
    // -------------------------------------------------------------------------

    /// Central finite differences on the full BPTT gradient. ε = 1e-6 with
    /// f64 math keeps truncation and rounding error below the 1e-6 gate on
    /// relative error.
    #[test]
    fn bptt_gradient_matches_finite_differences() {
        let cfg = GeneratorConfig {
            vocab_size: 8,
            hidden_dim: 5,
            embed_dim: 4,
            max_len: 10,
            temperature: 1.0,
        };
        let gen = Generator::init(cfg.clone(), &mut Rng::new(42)).unwrap();
        let seq: Vec<u32> = vec![3, 5, 1, 7, 4, 0];
        let positions = (seq.len() - 1) as f64;

        let mut grads = Grads::zeros_like(&gen);
        gen.accumulate_sequence_grads(&seq, &mut grads).unwrap();
        let mut analytic = Vec::new();
        for part in [&grads.embed, &grads.w_h, &grads.w_x, &grads.b_h, &grads.w_o, &grads.b_o] {
            analytic.extend(part.iter().map(|g| g / positions));
        }

        let flat = gen.to_flat();
        let eps = 1e-6;
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = flat.clone();
            plus[i] += eps;
            let mut minus = flat.clone();
            minus[i] -= eps;
            let loss_plus = Generator::from_flat(cfg.clone(), &plus)
                .unwrap()
                .mean_cross_entropy(&[seq.clone()])
                .unwrap();
            let loss_minus = Generator::from_flat(cfg.clone(), &minus)
                .unwrap()
                .mean_cross_entropy(&[seq.clone()])
                .unwrap();
            let numeric = (loss_plus - loss_minus) / (2.0 * eps);
            let rel = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-8);
            assert!(
                rel < 1e-6,
                "param {i}: analytic {a:.3e} vs numeric {numeric:.3e} (rel {rel:.3e})"
            );
        }
    }

    #[test]
    fn pretraining_loss_is_nonincreasing_early() {
        let mut rng = Rng::new(42);
        let corpus: Vec<Vec<u32>> = (0..200)
            .map(|_| {
                let len = 4 + rng.below(12);
                let mut seq: Vec<u32> = (0..len).map(|_| 3 + rng.below(13) as u32).collect();
                seq.push(EOS);
                seq
            })
            .collect();
        let mut gen = Generator::init(small_config(), &mut Rng::new(0)).unwrap();
        let cfg = PretrainConfig {
            epochs: 3,
            lr: 0.5,
            batch_size: 32,
        };
        let losses = gen.pretrain(&corpus, &cfg, &mut Rng::new(1)).unwrap();
        assert_eq!(losses.len(), 3);
        assert!(
            losses[0] >= losses[1] && losses[1] >= losses[2],
            "epoch losses increased: {losses:?}"
        );
    }

    #[test]
    fn pretraining_memorizes_a_single_sequence() {
        let seq: Vec<u32> = vec![5, 9, 13, 7, 11, 3, 0];
        let corpus = vec![seq; 4];
        let mut gen = Generator::init(small_config(), &mut Rng::new(2)).unwrap();
        let cfg = PretrainConfig {
            epochs: 200,
            lr: 0.5,
            batch_size: 4,
        };
        gen.pretrain(&corpus, &cfg, &mut Rng::new(3)).unwrap();
        let ce = gen.mean_cross_entropy(&corpus).unwrap();
        assert!(ce < 0.1, "per-token cross-entropy {ce:.4} nats after memorization");
    }

    #[test]
    fn pretraining_rejects_bad_inputs() {
        let mut gen = Generator::init(small_config(), &mut Rng::new(0)).unwrap();
        let cfg = PretrainConfig::default();
        assert!(gen.pretrain(&[], &cfg, &mut Rng::new(0)).is_err());
        assert!(gen
            .pretrain(&[vec![]], &cfg, &mut Rng::new(0))
            .is_err());
        assert!(gen
            .pretrain(&[vec![99]], &cfg, &mut Rng::new(0))
            .is_err());
        let bad = PretrainConfig {
            lr: 0.0,
            ..PretrainConfig::default()
        };
        assert!(gen.pretrain(&[vec![3, 4]], &bad, &mut Rng::new(0)).is_err());
    }
}
