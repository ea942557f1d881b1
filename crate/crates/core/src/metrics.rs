//! Evaluation metrics: distance to target, exact-match success rate with
//! base-model prefiltering, and self-BLEU diversity.
//!
//! All score arithmetic happens on the raw attribute scale (the 0–4 levels
//! the scorer reports), so reported distances are directly interpretable as
//! "levels missed". Success counting first removes prompts whose *unsteered*
//! generation already matched the target: steering is only credited for
//! changing outcomes, not for prompts that were already right.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::generator::{GenerationRecord, EOS};
use crate::Result;

// =============================================================================
// Distance and matching
// =============================================================================

/// Sum of absolute per-attribute differences on the raw scale.
///
/// # Errors
///
/// Fails when the vectors differ in length.
pub fn l1_to_target(scores: &[f64], target_raw: &[f64]) -> Result<f64> {
    if scores.len() != target_raw.len() {
        return Err(Error::DimensionMismatch {
            context: "l1_to_target",
            expected: target_raw.len(),
            got: scores.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(target_raw)
        .map(|(&s, &t)| (s - t).abs())
        .sum())
}

/// How continuous scores are snapped to integer levels before exact-match
/// comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundingRule {
    /// 2.5 → 3, 3.5 → 4 (and −0.5 → −1). The default.
    #[default]
    HalfAwayFromZero,
    /// Banker's rounding: 2.5 → 2, 3.5 → 4.
    HalfToEven,
}

impl RoundingRule {
    fn apply(self, x: f64) -> f64 {
        match self {
            // f64::round is round-half-away-from-zero.
            RoundingRule::HalfAwayFromZero => x.round(),
            RoundingRule::HalfToEven => {
                let r = x.round();
                if (x - x.trunc()).abs() == 0.5 && r % 2.0 != 0.0 {
                    r - (r - x).signum()
                } else {
                    r
                }
            }
        }
    }
}

/// True iff every score, rounded to the nearest integer level, equals the
/// target's rounded level. Uses round-half-away-from-zero.
///
/// # Errors
///
/// Fails when the vectors differ in length.
pub fn matched(scores_raw: &[f64], target_raw: &[f64]) -> Result<bool> {
    matched_with(scores_raw, target_raw, RoundingRule::HalfAwayFromZero)
}

/// [`matched`] with an explicit rounding rule.
pub fn matched_with(
    scores_raw: &[f64],
    target_raw: &[f64],
    rule: RoundingRule,
) -> Result<bool> {
    if scores_raw.len() != target_raw.len() {
        return Err(Error::DimensionMismatch {
            context: "matched",
            expected: target_raw.len(),
            got: scores_raw.len(),
        });
    }
    Ok(scores_raw
        .iter()
        .zip(target_raw)
        .all(|(&s, &t)| rule.apply(s) == rule.apply(t)))
}

// =============================================================================
// Evaluation report
// =============================================================================

/// Summary of one steering evaluation: counts, post-filter mean distance,
/// success rate, and output diversity.
///
/// Invariants: `n_evaluated = n_total − n_prefiltered`;
/// `n_matched ≤ n_evaluated`; `success_rate = n_matched / n_evaluated`
/// (0 when the denominator is 0 — a degenerate run is visible as
/// `n_evaluated == 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Record pairs examined.
    pub n_total: usize,
    /// Prompts removed because the unsteered generation already matched.
    pub n_prefiltered: usize,
    /// Prompts actually evaluated (`n_total − n_prefiltered`).
    pub n_evaluated: usize,
    /// Evaluated prompts whose steered generation matched the target.
    pub n_matched: usize,
    /// Mean raw-scale ℓ1 of steered scores over evaluated prompts
    /// (0 when none were evaluated).
    pub mean_l1: f64,
    /// `n_matched / n_evaluated` (0 when none were evaluated).
    pub success_rate: f64,
    /// Self-BLEU over all steered outputs, trailing end-of-sequence framing
    /// stripped (0 when fewer than two outputs exist).
    pub self_bleu: f64,
}

impl EvalReport {
    /// Column names for the one-row CSV form.
    pub fn csv_header() -> &'static str {
        "n_total,n_prefiltered,n_evaluated,n_matched,mean_l1,success_rate,self_bleu"
    }

    /// The report as a single CSV row matching [`EvalReport::csv_header`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6}",
            self.n_total,
            self.n_prefiltered,
            self.n_evaluated,
            self.n_matched,
            self.mean_l1,
            self.success_rate,
            self.self_bleu
        )
    }
}

fn raw_scores_of<'a>(record: &'a GenerationRecord, which: &str, idx: usize) -> Result<&'a [f64]> {
    record.raw_scores.as_deref().ok_or_else(|| {
        Error::Domain(format!(
            "{which} record at index {idx} has no raw scores; score records before evaluating"
        ))
    })
}

/// Strips one trailing end-of-sequence marker: framing, not content, and
/// shared framing would inflate apparent overlap between outputs.
fn content_of(record: &GenerationRecord) -> &[u32] {
    match record.output_tokens.split_last() {
        Some((&last, rest)) if last == EOS => rest,
        _ => &record.output_tokens,
    }
}

/// Scores a steering run against the unsteered baseline.
///
/// The two slices must be pairwise aligned by prompt id. Prompts whose
/// *base* scores already match `target_raw` are prefiltered; the success
/// rate and mean ℓ1 are computed over the remainder's *steered* records.
/// Self-BLEU is computed over all steered outputs regardless of filtering,
/// since diversity is a property of the full steered set.
///
/// # Errors
///
/// Fails when the slices differ in length, ids disagree at any position,
/// or any record is missing scores.
pub fn evaluate(
    base: &[GenerationRecord],
    steered: &[GenerationRecord],
    target_raw: &[f64],
) -> Result<EvalReport> {
    if base.len() != steered.len() {
        return Err(Error::Domain(format!(
            "record sets differ in length: {} base vs {} steered",
            base.len(),
            steered.len()
        )));
    }
    let mut n_prefiltered = 0;
    let mut n_matched = 0;
    let mut l1_sum = 0.0;
    let mut n_evaluated = 0;
    for (i, (b, s)) in base.iter().zip(steered).enumerate() {
        if b.prompt_id != s.prompt_id {
            return Err(Error::Domain(format!(
                "prompt id mismatch at index {i}: base {} vs steered {}",
                b.prompt_id, s.prompt_id
            )));
        }
        let b_scores = raw_scores_of(b, "base", i)?;
        let s_scores = raw_scores_of(s, "steered", i)?;
        if matched(b_scores, target_raw)? {
            n_prefiltered += 1;
            continue;
        }
        n_evaluated += 1;
        l1_sum += l1_to_target(s_scores, target_raw)?;
        if matched(s_scores, target_raw)? {
            n_matched += 1;
        }
    }
    let outputs: Vec<Vec<u32>> = steered.iter().map(|r| content_of(r).to_vec()).collect();
    let self_bleu_val = if outputs.len() >= 2 {
        self_bleu(&outputs, 4)?
    } else {
        0.0
    };
    Ok(EvalReport {
        n_total: steered.len(),
        n_prefiltered,
        n_evaluated,
        n_matched,
        mean_l1: if n_evaluated > 0 {
            l1_sum / n_evaluated as f64
        } else {
            0.0
        },
        success_rate: if n_evaluated > 0 {
            n_matched as f64 / n_evaluated as f64
        } else {
            0.0
        },
        self_bleu: self_bleu_val,
    })
}

// =============================================================================
// BLEU / self-BLEU
// =============================================================================

fn ngram_counts(tokens: &[u32], n: usize) -> HashMap<&[u32], usize> {
    let mut counts: HashMap<&[u32], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU of one hypothesis against a reference set: uniform weights over
/// n-gram orders `1..=max_n`, clipped counts, and the closest-length
/// brevity penalty (length ties resolved toward the shorter reference).
///
/// Orders for which the hypothesis has no n-grams at all (it is shorter
/// than `n`) are skipped and the uniform weights renormalized over the
/// remaining orders; an order where the hypothesis has n-grams but none
/// match contributes a zero precision, which zeroes the whole score unless
/// `smoothing_eps > 0` substitutes the floor value.
///
/// An empty hypothesis scores 1 against an empty closest reference and 0
/// otherwise.
///
/// # Errors
///
/// Fails when `refs` is empty, `max_n` is 0, or `smoothing_eps` is not a
/// finite value in `[0, 1)`.
pub fn bleu(hyp: &[u32], refs: &[&[u32]], max_n: usize, smoothing_eps: f64) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::Domain("BLEU needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::InvalidConfig("max_n must be >= 1".into()));
    }
    if !smoothing_eps.is_finite() || !(0.0..1.0).contains(&smoothing_eps) {
        return Err(Error::InvalidConfig(format!(
            "smoothing_eps must lie in [0, 1), got {smoothing_eps}"
        )));
    }

    // Brevity penalty: reference whose length is closest to the hypothesis,
    // ties broken toward the shorter reference.
    let c = hyp.len();
    let r = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("refs non-empty");
    if c == 0 {
        return Ok(if r == 0 { 1.0 } else { 0.0 });
    }
    let bp = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };

    // Modified (clipped) precisions per order, skipping orders the
    // hypothesis cannot populate.
    let mut log_sum = 0.0;
    let mut orders_used = 0usize;
    for n in 1..=max_n {
        let hyp_counts = ngram_counts(hyp, n);
        let total: usize = hyp_counts.values().sum();
        if total == 0 {
            continue; // hypothesis shorter than n: skip the order entirely
        }
        orders_used += 1;
        let ref_counts: Vec<HashMap<&[u32], usize>> =
            refs.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = hyp_counts
            .iter()
            .map(|(gram, &count)| {
                let max_ref = ref_counts
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                count.min(max_ref)
            })
            .sum();
        let p = clipped as f64 / total as f64;
        let p = if p > 0.0 { p } else { smoothing_eps };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    if orders_used == 0 {
        return Ok(0.0);
    }
    Ok(bp * (log_sum / orders_used as f64).exp())
}

/// Mean BLEU of each output against all the others. Higher means the
/// outputs repeat each other; lower means more diversity.
///
/// # Errors
///
/// Fails with fewer than two outputs (there would be nothing to compare
/// against) or on invalid `max_n`.
pub fn self_bleu(outputs: &[Vec<u32>], max_n: usize) -> Result<f64> {
    self_bleu_with(outputs, max_n, 0.0)
}

/// [`self_bleu`] with epsilon smoothing for zero precisions (off at 0).
pub fn self_bleu_with(outputs: &[Vec<u32>], max_n: usize, smoothing_eps: f64) -> Result<f64> {
    if outputs.len() < 2 {
        return Err(Error::Domain(format!(
            "self-BLEU needs at least 2 outputs, got {}",
            outputs.len()
        )));
    }
    let mut sum = 0.0;
    for (i, hyp) in outputs.iter().enumerate() {
        let refs: Vec<&[u32]> = outputs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, r)| r.as_slice())
            .collect();
        sum += bleu(hyp, &refs, max_n, smoothing_eps)?;
    }
    Ok(sum / outputs.len() as f64)
}

// =============================================================================
// Tests
// =============================================================================
