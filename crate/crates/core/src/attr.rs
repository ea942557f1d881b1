//! Attribute space: raw score scales, normalization, and target objectives.
//!
//! Attributes are scored on bounded raw scales (here a 0–4 Likert-style
//! scale). All learning and steering happens on the normalized unit
//! interval, so the conversions in this module are the single bridge
//! between the two views:
//!
//! - [`normalize`] / [`denormalize`] map raw scores into `[0, 1]` and back,
//!   linearly and invertibly.
//! - [`weighted_target_loss`] is the quadratic objective steering descends:
//!   `Σ_i w_i · (pred_i − tau_i)²` over normalized predictions.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// One attribute per entry; all vectors in a pipeline share the same order.
pub type AttributeVector = Vec<f64>;

// =============================================================================
// Types
// =============================================================================

/// Name and raw-scale bounds for one attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    /// Human-readable identifier, unique within a pipeline.
    pub name: String,
    /// Smallest raw score the attribute can take.
    pub min_raw: f64,
    /// Largest raw score the attribute can take; must exceed `min_raw`.
    pub max_raw: f64,
}

impl AttributeSpec {
    /// Builds a spec and checks its invariants.
    pub fn new(name: impl Into<String>, min_raw: f64, max_raw: f64) -> Result<Self> {
        let spec = AttributeSpec {
            name: name.into(),
            min_raw,
            max_raw,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks that the name is non-empty and the bounds are finite and ordered.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::InvalidConfig("attribute name is empty".into()));
        }
        if !self.min_raw.is_finite() || !self.max_raw.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "attribute '{}' has non-finite bounds",
                self.name
            )));
        }
        if self.min_raw >= self.max_raw {
            return Err(Error::InvalidConfig(format!(
                "attribute '{}' needs min_raw < max_raw, got [{}, {}]",
                self.name, self.min_raw, self.max_raw
            )));
        }
        Ok(())
    }
}

/// Normalized target intensities plus per-attribute weights.
///
/// A zero weight removes the attribute from the objective entirely, which is
/// how pair-restricted targets (for frontier work) leave the remaining
/// attributes free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetVector {
    /// Desired normalized intensity per attribute, each in `[0, 1]`.
    pub tau: Vec<f64>,
    /// Non-negative weight per attribute.
    pub weights: Vec<f64>,
}

impl TargetVector {
    /// Builds a target and checks its invariants.
    pub fn new(tau: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if tau.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                context: "TargetVector",
                expected: tau.len(),
                got: weights.len(),
            });
        }
        if tau.is_empty() {
            return Err(Error::InvalidConfig("target vector is empty".into()));
        }
        for (i, &t) in tau.iter().enumerate() {
            if !t.is_finite() || !(0.0..=1.0).contains(&t) {
                return Err(Error::Domain(format!(
                    "target tau[{i}] = {t} is outside [0, 1]"
                )));
            }
        }
        for (i, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Domain(format!("target weight[{i}] = {w} is negative")));
            }
        }
        Ok(TargetVector { tau, weights })
    }

    /// Target with unit weight on every attribute.
    pub fn uniform(tau: Vec<f64>) -> Result<Self> {
        let weights = vec![1.0; tau.len()];
        TargetVector::new(tau, weights)
    }

    /// Re-checks invariants on an already-built target (deserialization
    /// bypasses [`TargetVector::new`]).
    pub fn validate(&self) -> Result<()> {
        TargetVector::new(self.tau.clone(), self.weights.clone()).map(|_| ())
    }

    /// Number of attributes the target spans.
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    /// True when the target spans no attributes (never constructible via `new`).
    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

// =============================================================================
// Operations
// =============================================================================

fn check_lengths(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Maps raw scores onto `[0, 1]` via `(raw − min) / (max − min)`.
///
/// # Errors
///
/// Fails if lengths differ, an entry is non-finite, or a raw score falls
/// outside its spec's bounds. Use [`normalize_clamped`] to clamp instead of
/// rejecting out-of-range scores.
pub fn normalize(raw: &[f64], specs: &[AttributeSpec]) -> Result<AttributeVector> {
    normalize_inner(raw, specs, false)
}

/// Like [`normalize`], but clamps out-of-range raw scores to the bounds
/// instead of rejecting them. The explicit opt-in for lossy inputs.
pub fn normalize_clamped(raw: &[f64], specs: &[AttributeSpec]) -> Result<AttributeVector> {
    normalize_inner(raw, specs, true)
}

fn normalize_inner(raw: &[f64], specs: &[AttributeSpec], clamp: bool) -> Result<AttributeVector> {
    check_lengths("normalize", specs.len(), raw.len())?;
    raw.iter()
        .zip(specs)
        .map(|(&r, spec)| {
            if !r.is_finite() {
                return Err(Error::NonFinite(format!(
                    "raw score for '{}' is {r}",
                    spec.name
                )));
            }
            let r = if clamp {
                r.clamp(spec.min_raw, spec.max_raw)
            } else if r < spec.min_raw || r > spec.max_raw {
                return Err(Error::Domain(format!(
                    "raw score {r} for '{}' is outside [{}, {}]",
                    spec.name, spec.min_raw, spec.max_raw
                )));
            } else {
                r
            };
            Ok((r - spec.min_raw) / (spec.max_raw - spec.min_raw))
        })
        .collect()
}

/// Inverse of [`normalize`]: maps `[0, 1]` scores back to the raw scale.
///
/// Inputs outside `[0, 1]` extrapolate linearly; only shape and finiteness
/// are enforced so steering targets slightly outside the seen range remain
/// expressible.
pub fn denormalize(norm: &[f64], specs: &[AttributeSpec]) -> Result<AttributeVector> {
    check_lengths("denormalize", specs.len(), norm.len())?;
    norm.iter()
        .zip(specs)
        .map(|(&n, spec)| {
            if !n.is_finite() {
                return Err(Error::NonFinite(format!(
                    "normalized score for '{}' is {n}",
                    spec.name
                )));
            }
            Ok(spec.min_raw + n * (spec.max_raw - spec.min_raw))
        })
        .collect()
}

/// Quadratic distance from normalized predictions to a target:
/// `Σ_i weights[i] · (pred[i] − tau[i])²`.
///
/// # Errors
///
/// Fails if `pred` and the target disagree in length.
pub fn weighted_target_loss(pred: &[f64], target: &TargetVector) -> Result<f64> {
    check_lengths("weighted_target_loss", target.len(), pred.len())?;
    Ok(pred
        .iter()
        .zip(target.tau.iter().zip(&target.weights))
        .map(|(&p, (&t, &w))| {
            let d = p - t;
            w * d * d
        })
        .sum())
}

// =============================================================================
// Tests
// =============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn likert(n: usize) -> Vec<AttributeSpec> {
        (0..n)
            .map(|i| AttributeSpec::new(format!("a{i}"), 0.0, 4.0).unwrap())
            .collect()
    }

    #[test]
    fn normalize_likert_examples() {
        // [4,4,4,2,2] on 0–4 → [1,1,1,0.5,0.5].
        let specs = likert(5);
        let norm = normalize(&[4.0, 4.0, 4.0, 2.0, 2.0], &specs).unwrap();
        assert_eq!(norm, vec![1.0, 1.0, 1.0, 0.5, 0.5]);

        // [3] on a 1–5 scale → [0.5].
        let spec = [AttributeSpec::new("mid", 1.0, 5.0).unwrap()];
        assert_eq!(normalize(&[3.0], &spec).unwrap(), vec![0.5]);
    }

    #[test]
    fn weighted_loss_examples() {
        let t = TargetVector::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(
            weighted_target_loss(&[1.0, 0.0], &t).unwrap(),
            1.0,
            epsilon = 1e-15
        );

        let t = TargetVector::new(vec![0.25], vec![2.0]).unwrap();
        assert_abs_diff_eq!(
            weighted_target_loss(&[0.5], &t).unwrap(),
            0.125,
            epsilon = 1e-15
        );
    }

    #[test]
    fn strict_normalize_rejects_out_of_range() {
        let specs = likert(1);
        assert!(normalize(&[4.5], &specs).is_err());
        assert!(normalize(&[-0.1], &specs).is_err());
        // Clamped variant folds the same inputs onto the bounds.
        assert_eq!(normalize_clamped(&[4.5], &specs).unwrap(), vec![1.0]);
        assert_eq!(normalize_clamped(&[-0.1], &specs).unwrap(), vec![0.0]);
    }

    #[test]
    fn length_mismatches_are_rejected() {
        let specs = likert(2);
        assert!(normalize(&[1.0], &specs).is_err());
        assert!(denormalize(&[0.5, 0.5, 0.5], &specs).is_err());
        let t = TargetVector::uniform(vec![0.5, 0.5]).unwrap();
        assert!(weighted_target_loss(&[0.5], &t).is_err());
    }

    #[test]
    fn invalid_specs_and_targets_are_rejected() {
        assert!(AttributeSpec::new("", 0.0, 4.0).is_err());
        assert!(AttributeSpec::new("bad", 4.0, 4.0).is_err());
        assert!(AttributeSpec::new("bad", 4.0, 0.0).is_err());
        assert!(TargetVector::new(vec![0.5], vec![-1.0]).is_err());
        assert!(TargetVector::new(vec![1.5], vec![1.0]).is_err());
        assert!(TargetVector::new(vec![0.5, 0.5], vec![1.0]).is_err());
        assert!(TargetVector::new(vec![], vec![]).is_err());
    }

    #[test]
    fn non_finite_scores_are_rejected() {
        let specs = likert(1);
        assert!(normalize(&[f64::NAN], &specs).is_err());
        assert!(denormalize(&[f64::INFINITY], &specs).is_err());
    }

    proptest! {
        // Normalization is linear and invertible within bounds.
        #[test]
        fn round_trip_within_bounds(
            raw in proptest::collection::vec(0.0f64..=4.0, 1..6)
        ) {
            let specs = likert(raw.len());
            let norm = normalize(&raw, &specs).unwrap();
            let back = denormalize(&norm, &specs).unwrap();
            for (r, b) in raw.iter().zip(&back) {
                prop_assert!((r - b).abs() <= 1e-12);
            }
            for n in &norm {
                prop_assert!((0.0..=1.0).contains(n));
            }
        }

        // The loss is non-negative and zero exactly at the target.
        #[test]
        fn loss_is_nonnegative(
            pred in proptest::collection::vec(0.0f64..=1.0, 1..6),
            shift in 0.0f64..=1.0,
        ) {
            let tau: Vec<f64> = pred.iter().map(|p| (p + shift).min(1.0)).collect();
            let t = TargetVector::uniform(tau.clone()).unwrap();
            let loss = weighted_target_loss(&pred, &t).unwrap();
            prop_assert!(loss >= 0.0);
            let at_target = weighted_target_loss(&tau, &t).unwrap();
            prop_assert!(at_target.abs() <= 1e-15);
        }
    }
}
