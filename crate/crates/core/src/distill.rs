//! Controllable distillation: turn a steerable generator into training
//! data, then into a generator that hits targets without intervention.
//!
//! Two dataset builders are provided. The steered builder runs the
//! gradient intervention toward each target and keeps generations that
//! land within an acceptance radius — most attempts land, so the budget is
//! spent efficiently. The best-of-N builder is the classic baseline:
//! sample blindly, keep the closest candidate per prompt if any candidate
//! is acceptable. Both report exact generation counts so the two routes
//! can be compared at equal sample quality.
//!
//! Acceptance is judged on the raw score scale over the attributes the
//! target actually weights (weight 0 removes an attribute from both the
//! steering objective and the acceptance distance; positive weights select
//! the attribute but do not scale the distance).

use serde::{Deserialize, Serialize};

use crate::attr::{AttributeSpec, TargetVector};
use crate::error::Error;
use crate::generator::Generator;
use crate::metrics::l1_to_target;
use crate::reward::{Scorer, ScoredExample};
use crate::rng::Rng;
use crate::steer::{steer_generate, SteerConfig};
use crate::value::ValueFunction;
use crate::Result;

/// Attempt budget multiplier: the steered builder gives up after
/// `ATTEMPT_CAP_FACTOR × n_samples` generations.
const ATTEMPT_CAP_FACTOR: usize = 10;

// =============================================================================
// Configuration
// =============================================================================

/// Settings for building a distillation set and fine-tuning on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Accepted examples to collect.
    pub n_samples: usize,
    /// Targets to cycle through (for example, frontier interpolants or a
    /// grid of intensities).
    pub targets: Vec<TargetVector>,
    /// Acceptance radius: raw-scale ℓ1 over the target's weighted
    /// attributes. 1.0 is one level summed across attributes.
    pub accept_l1: f64,
    /// Fine-tuning epochs over the accepted set.
    pub finetune_epochs: usize,
    /// Fine-tuning learning rate.
    pub finetune_lr: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n_samples: 256,
            targets: Vec::new(),
            accept_l1: 1.0,
            finetune_epochs: 20,
            finetune_lr: 0.5,
        }
    }
}

impl DistillConfig {
    /// Checks invariants. Targets must be present and each must weight at
    /// least one attribute, otherwise acceptance would be vacuous.
    pub fn validate(&self, scorer_dim: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
        }
        if self.accept_l1.is_nan() || self.accept_l1 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "accept_l1 must be >= 0, got {}",
                self.accept_l1
            )));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidConfig(
                "distillation needs at least one target".into(),
            ));
        }
        for (i, t) in self.targets.iter().enumerate() {
            t.validate()?;
            if t.len() != scorer_dim {
                return Err(Error::DimensionMismatch {
                    context: "distillation target width",
                    expected: scorer_dim,
                    got: t.len(),
                });
            }
            if t.weights.iter().all(|&w| w == 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "distillation target {i} weights no attribute"
                )));
            }
        }
        if !self.finetune_lr.is_finite() || self.finetune_lr <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "finetune_lr must be positive, got {}",
                self.finetune_lr
            )));
        }
        Ok(())
    }
}

// =============================================================================
// Acceptance predicate
// =============================================================================

/// Raw-scale ℓ1 between achieved scores and the target, restricted to the
/// attributes the target weights (weight 0 excludes, any positive weight
/// includes unscaled).
pub fn support_l1(
    scores_raw: &[f64],
    target: &TargetVector,
    specs: &[AttributeSpec],
) -> Result<f64> {
    if scores_raw.len() != target.len() || specs.len() != target.len() {
        return Err(Error::DimensionMismatch {
            context: "support_l1",
            expected: target.len(),
            got: scores_raw.len(),
        });
    }
    let mut picked_scores = Vec::new();
    let mut picked_target = Vec::new();
    for (i, &w) in target.weights.iter().enumerate() {
        if w > 0.0 {
            picked_scores.push(scores_raw[i]);
            let span = specs[i].max_raw - specs[i].min_raw;
            picked_target.push(specs[i].min_raw + target.tau[i] * span);
        }
    }
    l1_to_target(&picked_scores, &picked_target)
}

// =============================================================================
// Dataset builders
// =============================================================================

/// A distillation set built by steering, with exact budget accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeredSet {
    /// Accepted examples, in acceptance order.
    pub examples: Vec<ScoredExample>,
    /// Steered generations attempted (equals generations consumed).
    pub attempts: usize,
    /// `examples.len() / attempts`.
    pub acceptance_ratio: f64,
    /// True when the attempt cap ended collection before `n_samples`.
    pub cap_hit: bool,
}

impl SteeredSet {
    /// Generations spent building the set.
    pub fn generations_consumed(&self) -> usize {
        self.attempts
    }
}

/// Builds a target-conditioned training set by steering toward each
/// target and keeping generations within the acceptance radius.
///
/// Attempt `j` pairs `prompts[j % prompts.len()]` with
/// `targets[j % targets.len()]` and draws from child stream `j` of `rng`.
/// Collection stops at `n_samples` accepted or at the 10× attempt cap; a
/// capped run returns the partial set with a warning on stderr.
pub fn build_steered_set(
    gen: &Generator,
    vf: &ValueFunction,
    scorer: &Scorer,
    prompts: &[Vec<u32>],
    cfg: &DistillConfig,
    steer_cfg: &SteerConfig,
    rng: &Rng,
) -> Result<SteeredSet> {
    cfg.validate(scorer.dim())?;
    steer_cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::Domain("steered set needs at least one prompt".into()));
    }
    let specs = scorer.specs();
    let cap = ATTEMPT_CAP_FACTOR * cfg.n_samples;
    let mut examples = Vec::with_capacity(cfg.n_samples);
    let mut attempts = 0;
    while examples.len() < cfg.n_samples && attempts < cap {
        let prompt = &prompts[attempts % prompts.len()];
        let target = &cfg.targets[attempts % cfg.targets.len()];
        let mut child = rng.child(attempts as u64);
        let record = steer_generate(gen, vf, scorer, prompt, target, steer_cfg, &mut child)?;
        attempts += 1;
        let raw = record.raw_scores.as_ref().expect("steer_generate scores records");
        if support_l1(raw, target, &specs)? <= cfg.accept_l1 {
            examples.push(ScoredExample::from_record(&record)?);
        }
    }
    let cap_hit = examples.len() < cfg.n_samples;
    if cap_hit {
        eprintln!(
            "steered set: attempt cap reached at {attempts} generations with only {} of {} samples accepted",
            examples.len(),
            cfg.n_samples
        );
    }
    Ok(SteeredSet {
        acceptance_ratio: examples.len() as f64 / attempts as f64,
        examples,
        attempts,
        cap_hit,
    })
}

/// A best-of-N dataset, with exact budget accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonSet {
    /// Winning example per prompt that produced any acceptable candidate.
    pub examples: Vec<ScoredExample>,
    /// Always `N × prompts.len()`.
    pub generations_consumed: usize,
    /// Prompts where no candidate fell within the acceptance radius.
    pub prompts_skipped: usize,
    /// Prompt index behind each entry of `examples`, in the same order.
    pub accepted_prompts: Vec<usize>,
}

/// Baseline dataset builder: per prompt, sample `n_candidates` unsteered
/// generations and keep the one closest to the prompt's target (prompt `i`
/// cycles to `targets[i % targets.len()]`), provided it falls within the
/// acceptance radius; otherwise the prompt contributes nothing. Candidate
/// `k` of prompt `i` draws from child stream `i·N + k`.
pub fn build_bon_set(
    gen: &Generator,
    scorer: &Scorer,
    prompts: &[Vec<u32>],
    n_candidates: usize,
    cfg: &DistillConfig,
    rng: &Rng,
) -> Result<BonSet> {
    cfg.validate(scorer.dim())?;
    if n_candidates == 0 {
        return Err(Error::InvalidConfig("best-of-N needs N >= 1".into()));
    }
    if prompts.is_empty() {
        return Err(Error::Domain("best-of-N needs at least one prompt".into()));
    }
    let specs = scorer.specs();
    let mut examples = Vec::new();
    let mut accepted_prompts = Vec::new();
    let mut prompts_skipped = 0;
    for (i, prompt) in prompts.iter().enumerate() {
        let target = &cfg.targets[i % cfg.targets.len()];
        let mut best: Option<(f64, ScoredExample)> = None;
        for k in 0..n_candidates {
            let mut child = rng.child((i * n_candidates + k) as u64);
            let mut record = gen.generate(prompt, &mut child, None)?;
            scorer.score_record(&mut record)?;
            let raw = record.raw_scores.as_ref().expect("scored above");
            let dist = support_l1(raw, target, &specs)?;
            if dist <= cfg.accept_l1
                && best.as_ref().map_or(true, |(b, _)| dist < *b)
            {
                best = Some((dist, ScoredExample::from_record(&record)?));
            }
        }
        match best {
            Some((_, ex)) => {
                examples.push(ex);
                accepted_prompts.push(i);
            }
            None => prompts_skipped += 1,
        }
    }
    Ok(BonSet {
        examples,
        generations_consumed: n_candidates * prompts.len(),
        prompts_skipped,
        accepted_prompts,
    })
}

// =============================================================================
// Fine-tuning
// =============================================================================

/// Fine-tunes a copy of the generator on the `prompt ⧺ output` sequences
/// of a distillation set, returning the distilled generator. Zero epochs
/// return an exact copy.
///
/// # Errors
///
/// Fails on an empty dataset or when training diverges.
pub fn finetune(
    gen: &Generator,
    dataset: &[ScoredExample],
    epochs: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<Generator> {
    if dataset.is_empty() {
        return Err(Error::Domain("fine-tuning needs a non-empty dataset".into()));
    }
    let sequences: Vec<Vec<u32>> = dataset
        .iter()
        .map(|ex| {
            let mut seq = ex.prompt.clone();
            seq.extend_from_slice(&ex.output);
            seq
        })
        .collect();
    let mut distilled = gen.clone();
    if epochs == 0 {
        return Ok(distilled);
    }
    let cfg = crate::generator::PretrainConfig {
        epochs,
        lr,
        ..crate::generator::PretrainConfig::default()
    };
    distilled.pretrain(&sequences, &cfg, rng)?;
    Ok(distilled)
}

// =============================================================================
// Tests
// =============================================================================
