//! Test-time intervention: gradient descent on hidden states.
//!
//! At every decoding step the current hidden state `h` is nudged so the
//! value heads predict scores closer to the target:
//!
//! ```text
//! h ← h − α · (∇_h Σ_i w_i (V_i(h) − tau_i)²  +  weight_decay · h)
//! ```
//!
//! The generator's weights never change — only the state passing through
//! it — so one trained generator plus one trained value function can serve
//! any target. Two open-ended modes reuse the same loop with the objective
//! `∓ Σ_i w_i V_i(h)` for pushing attributes up or down without a fixed
//! target.
//!
//! The loop keeps the best iterate it has seen and stops on whichever comes
//! first: the objective staying within tolerance for `patience` consecutive
//! iterates, `patience` consecutive iterates without a `min_delta`
//! improvement, or the `max_updates` cap.

use serde::{Deserialize, Serialize};

use crate::attr::TargetVector;
use crate::error::Error;
use crate::generator::{GenerationRecord, Generator, SteerStepSummary, EOS, SEP};
use crate::reward::Scorer;
use crate::rng::Rng;
use crate::value::ValueFunction;
use crate::Result;

// =============================================================================
// Configuration
// =============================================================================

/// What the per-step objective drives toward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerMode {
    /// Descend on `Σ w_i (V_i(h) − tau_i)²` toward the target intensities.
    TargetReaching,
    /// Descend on `−Σ w_i V_i(h)`: push weighted attributes up, open-ended.
    Maximize,
    /// Descend on `Σ w_i V_i(h)`: push weighted attributes down, open-ended.
    Minimize,
}

/// Hyperparameters for the per-step intervention loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerConfig {
    /// Gradient step size.
    pub alpha: f64,
    /// Hard cap on updates per decoding step; `0` disables intervention.
    pub max_updates: usize,
    /// Objective level counted as "target met" (target-reaching mode only).
    pub tolerance: f64,
    /// Consecutive qualifying iterates required to stop.
    pub patience: usize,
    /// Smallest objective decrease that counts as improvement.
    pub min_delta: f64,
    /// Decoupled decay pulling the edited state toward the origin.
    pub weight_decay: f64,
    /// Objective family.
    pub mode: SteerMode,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig {
            alpha: 7e-2,
            max_updates: 200,
            tolerance: 1e-4,
            patience: 10,
            min_delta: 1e-4,
            weight_decay: 0.01,
            mode: SteerMode::TargetReaching,
        }
    }
}

impl SteerConfig {
    /// Checks loop invariants. `max_updates = 0` is allowed and means the
    /// intervention is a no-op (useful as a null control).
    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !self.tolerance.is_finite() || self.tolerance < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be >= 0, got {}",
                self.tolerance
            )));
        }
        if !self.min_delta.is_finite() || self.min_delta < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "min_delta must be >= 0, got {}",
                self.min_delta
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// Why an intervention loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Objective stayed within tolerance for `patience` consecutive iterates
    /// (or was already within tolerance on entry).
    Tolerance,
    /// `patience` consecutive iterates without a `min_delta` improvement.
    Patience,
    /// The update cap was reached.
    MaxUpdates,
    /// The objective became non-finite; the original state was returned.
    NonFinite,
}

/// Outcome of one per-step intervention loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Gradient updates actually applied.
    pub updates_applied: usize,
    /// Objective at the entry state.
    pub objective_before: f64,
    /// Objective of the returned (best observed) state; never exceeds
    /// `objective_before`.
    pub objective_after: f64,
    /// Which stop condition fired.
    pub stop_reason: StopReason,
}

// =============================================================================
// Per-step intervention
// =============================================================================

/// Objective value and descent gradient at `h` for the configured mode.
fn objective_and_grad(
    vf: &ValueFunction,
    h: &[f64],
    target: &TargetVector,
    mode: SteerMode,
) -> Result<(f64, Vec<f64>)> {
    match mode {
        SteerMode::TargetReaching => vf.grad_wrt_input(h, target),
        SteerMode::Maximize => {
            let (value, grad) = vf.grad_weighted_sum(h, &target.weights)?;
            Ok((-value, grad.into_iter().map(|g| -g).collect()))
        }
        SteerMode::Minimize => vf.grad_weighted_sum(h, &target.weights),
    }
}

/// Runs the intervention loop on one hidden state and returns the best
/// iterate alongside its trace.
///
/// The entry state counts as the initial best, so the returned objective
/// never exceeds the entry objective. In target-reaching mode an entry
/// objective already within tolerance returns immediately with zero
/// updates. The tolerance stop applies only to target-reaching mode; the
/// open-ended modes stop on patience or the cap. A non-finite objective
/// abandons the loop and returns the *original* state with
/// [`StopReason::NonFinite`] as the diagnostic.
///
/// # Errors
///
/// Fails on invalid config or mismatched state/target dimensions.
pub fn intervene_step(
    vf: &ValueFunction,
    h: &[f64],
    target: &TargetVector,
    cfg: &SteerConfig,
) -> Result<(Vec<f64>, StepTrace)> {
    cfg.validate()?;
    let (entry_obj, mut grad) = objective_and_grad(vf, h, target, cfg.mode)?;

    let non_finite = |updates: usize| {
        (
            h.to_vec(),
            StepTrace {
                updates_applied: updates,
                objective_before: entry_obj,
                objective_after: entry_obj,
                stop_reason: StopReason::NonFinite,
            },
        )
    };
    if !entry_obj.is_finite() {
        return Ok(non_finite(0));
    }
    let done = |updates: usize, best_obj: f64, best: Vec<f64>, reason: StopReason| {
        (
            best,
            StepTrace {
                updates_applied: updates,
                objective_before: entry_obj,
                objective_after: best_obj,
                stop_reason: reason,
            },
        )
    };

    let use_tolerance = cfg.mode == SteerMode::TargetReaching;
    if use_tolerance && entry_obj <= cfg.tolerance {
        return Ok(done(0, entry_obj, h.to_vec(), StopReason::Tolerance));
    }

    let mut cur = h.to_vec();
    let mut best = cur.clone();
    let mut best_obj = entry_obj;
    let mut within_tolerance = 0usize;
    let mut stalled = 0usize;
    let mut updates = 0usize;

    loop {
        if updates == cfg.max_updates {
            return Ok(done(updates, best_obj, best, StopReason::MaxUpdates));
        }
        for (c, g) in cur.iter_mut().zip(&grad) {
            *c -= cfg.alpha * (g + cfg.weight_decay * *c);
        }
        updates += 1;

        let (obj, new_grad) = objective_and_grad(vf, &cur, target, cfg.mode)?;
        if !obj.is_finite() {
            return Ok(non_finite(updates));
        }
        grad = new_grad;

        let improved = obj < best_obj - cfg.min_delta;
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&cur);
        }

        if use_tolerance {
            within_tolerance = if obj <= cfg.tolerance {
                within_tolerance + 1
            } else {
                0
            };
            if within_tolerance >= cfg.patience {
                return Ok(done(updates, best_obj, best, StopReason::Tolerance));
            }
        }
        stalled = if improved { 0 } else { stalled + 1 };
        if stalled >= cfg.patience {
            return Ok(done(updates, best_obj, best, StopReason::Patience));
        }
    }
}

// =============================================================================
// Steered generation
// =============================================================================

fn check_wiring(gen: &Generator, vf: &ValueFunction, scorer: &Scorer, target: &TargetVector) -> Result<()> {
    if vf.input_dim() != gen.hidden_dim() {
        return Err(Error::DimensionMismatch {
            context: "value function input vs generator hidden state",
            expected: gen.hidden_dim(),
            got: vf.input_dim(),
        });
    }
    if vf.output_dim() != scorer.dim() {
        return Err(Error::DimensionMismatch {
            context: "value heads vs scorer attributes",
            expected: scorer.dim(),
            got: vf.output_dim(),
        });
    }
    if target.len() != vf.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "steering target vs value heads",
            expected: vf.output_dim(),
            got: target.len(),
        });
    }
    Ok(())
}

/// Generates with the intervention loop applied at every decoding step and
/// returns a fully scored record carrying per-step traces.
///
/// With `max_updates = 0` the hook never changes the state, so the output
/// matches unsteered generation under the same seed exactly.
pub fn steer_generate(
    gen: &Generator,
    vf: &ValueFunction,
    scorer: &Scorer,
    prompt: &[u32],
    target: &TargetVector,
    cfg: &SteerConfig,
    rng: &mut Rng,
) -> Result<GenerationRecord> {
    cfg.validate()?;
    check_wiring(gen, vf, scorer, target)?;

    let mut summaries: Vec<SteerStepSummary> = Vec::new();
    let mut hook_error: Option<Error> = None;
    let mut hook = |_step: usize, state: &mut Vec<f64>| {
        if hook_error.is_some() {
            return; // already failed; leave the state untouched
        }
        match intervene_step(vf, state, target, cfg) {
            Ok((edited, trace)) => {
                *state = edited;
                summaries.push(SteerStepSummary {
                    updates_applied: trace.updates_applied,
                    final_objective: trace.objective_after,
                });
            }
            Err(e) => hook_error = Some(e),
        }
    };
    let mut record = gen.generate(prompt, rng, Some(&mut hook))?;
    if let Some(e) = hook_error {
        return Err(e);
    }
    record.steer_trace = Some(summaries);
    scorer.score_record(&mut record)?;
    Ok(record)
}

/// Composes the next round's prompt: original prompt, separator, previous
/// content (terminator stripped), separator, original prompt again. Longer
/// than `4 · max_len` is truncated from the front (oldest context first).
fn compose_round_prompt(prompt: &[u32], prev_output: &[u32], max_len: usize) -> (Vec<u32>, bool) {
    let content = match prev_output.last() {
        Some(&t) if t == EOS => &prev_output[..prev_output.len() - 1],
        _ => prev_output,
    };
    let mut composed = Vec::with_capacity(prompt.len() * 2 + content.len() + 2);
    composed.extend_from_slice(prompt);
    composed.push(SEP);
    composed.extend_from_slice(content);
    composed.push(SEP);
    composed.extend_from_slice(prompt);

    let cap = 4 * max_len;
    if composed.len() > cap {
        let start = composed.len() - cap;
        (composed[start..].to_vec(), true)
    } else {
        (composed, false)
    }
}

/// Multi-round steering: each round re-prompts with the previous round's
/// output folded into the context, giving the intervention a fresh chance
/// from a richer starting state. Returns one scored record per round.
pub fn iterative_steer(
    gen: &Generator,
    vf: &ValueFunction,
    scorer: &Scorer,
    prompt: &[u32],
    target: &TargetVector,
    cfg: &SteerConfig,
    rounds: usize,
    rng: &mut Rng,
) -> Result<Vec<GenerationRecord>> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("iterative steering needs rounds >= 1".into()));
    }
    let mut records = Vec::with_capacity(rounds);
    let mut round_prompt = prompt.to_vec();
    let mut truncated = false;
    for _ in 0..rounds {
        let mut record = steer_generate(gen, vf, scorer, &round_prompt, target, cfg, rng)?;
        record.context_truncated = truncated;
        let (next_prompt, next_truncated) =
            compose_round_prompt(prompt, &record.output_tokens, gen.config().max_len);
        records.push(record);
        round_prompt = next_prompt;
        truncated = next_truncated;
    }
    Ok(records)
}

// =============================================================================
// Tests
// =============================================================================
