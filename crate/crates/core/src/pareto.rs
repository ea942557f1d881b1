//! Frontier approximation over attribute pairs.
//!
//! Given a generator, trained value heads, and a scorer, this module maps
//! the attainable trade-off surface between two attributes:
//!
//! 1. **Sampling** — one unsteered generation per prompt, reduced to its
//!    non-dominated set.
//! 2. **Target proposal** — interpolation between adjacent frontier points
//!    (directly, or between upper-convex-hull vertices, which bow the
//!    targets outward past the current frontier).
//! 3. **Refinement** — repeatedly steer a generation toward the proposed
//!    target sitting in the largest coverage gap, inserting the achieved
//!    scores when they are non-dominated.
//!
//! Frontier quality is measured by dominated hypervolume (rectangle union
//! against a reference point) and sparsity (mean squared gap between
//! adjacent points). A scalarized grid baseline with the same generation
//! budget is provided for comparison.

use serde::{Deserialize, Serialize};

use crate::attr::{normalize, AttributeVector, TargetVector};
use crate::error::Error;
use crate::generator::Generator;
use crate::reward::Scorer;
use crate::rng::Rng;
use crate::steer::{steer_generate, SteerConfig, SteerMode};
use crate::value::ValueFunction;
use crate::Result;

/// RNG child-id offsets keeping the three sampling phases on disjoint
/// streams regardless of prompt count.
const REFINE_STREAM: u64 = 1 << 40;
const GRID_STREAM: u64 = 1 << 41;

// =============================================================================
// Dominance
// =============================================================================

/// Pareto dominance: `q` dominates `p` when `q` is at least as good in every
/// attribute and strictly better in at least one.
///
/// # Panics
///
/// Panics if the vectors differ in length.
pub fn dominates(q: &[f64], p: &[f64]) -> bool {
    assert_eq!(q.len(), p.len(), "dominance needs equal-length vectors");
    let mut strict = false;
    for (&a, &b) in q.iter().zip(p) {
        if a < b {
            return false;
        }
        if a > b {
            strict = true;
        }
    }
    strict
}

/// Indices of the maximal (non-dominated) subset, in input order. Exact
/// duplicate vectors collapse to their earliest occurrence, so the result
/// is the maximal *set*.
///
/// Two attributes use a sort-and-sweep; more use sorted incremental culling
/// (a dominating point always has a strictly larger coordinate sum, so
/// candidates visited in descending-sum order only need checking against
/// already-kept points).
pub fn extract_nondominated(points: &[AttributeVector]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let m = points[0].len();
    assert!(
        points.iter().all(|p| p.len() == m),
        "all points must share one width"
    );
    let mut kept: Vec<usize> = if m == 2 {
        // Sweep x descending; a point survives iff its y strictly exceeds
        // every y seen so far. Stable order makes duplicates keep the
        // earliest index.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[b][0]
                .partial_cmp(&points[a][0])
                .unwrap()
                .then(points[b][1].partial_cmp(&points[a][1]).unwrap())
                .then(a.cmp(&b))
        });
        let mut best_y = f64::NEG_INFINITY;
        let mut kept = Vec::new();
        for &i in &order {
            if points[i][1] > best_y {
                best_y = points[i][1];
                kept.push(i);
            }
        }
        kept
    } else {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (points[a].iter().sum::<f64>(), points[b].iter().sum::<f64>());
            sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
        });
        let mut kept: Vec<usize> = Vec::new();
        for &i in &order {
            let candidate = &points[i];
            let blocked = kept
                .iter()
                .any(|&k| dominates(&points[k], candidate) || points[k] == *candidate);
            if !blocked {
                kept.push(i);
            }
        }
        kept
    };
    kept.sort_unstable();
    kept
}

// =============================================================================
// Frontier
// =============================================================================

/// A frontier point projected onto the selected attribute pair, plus the
/// index of the generation that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierEntry {
    /// Raw-scale scores on the selected pair.
    pub point: [f64; 2],
    /// Generation index within the search that produced this point.
    pub id: usize,
}

/// Mutually non-dominated points over one attribute pair, sorted ascending
/// by the first attribute (hence strictly descending in the second).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Frontier {
    entries: Vec<FrontierEntry>,
}

impl Frontier {
    /// Reduces arbitrary candidates to their sorted non-dominated set.
    pub fn from_candidates(candidates: Vec<FrontierEntry>) -> Frontier {
        let points: Vec<AttributeVector> =
            candidates.iter().map(|c| c.point.to_vec()).collect();
        let mut entries: Vec<FrontierEntry> = extract_nondominated(&points)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        entries.sort_by(|a, b| a.point[0].partial_cmp(&b.point[0]).unwrap());
        Frontier { entries }
    }

    /// The sorted entries.
    pub fn entries(&self) -> &[FrontierEntry] {
        &self.entries
    }

    /// The sorted points without provenance.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.entries.iter().map(|e| e.point).collect()
    }

    /// Number of frontier points.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when the frontier holds no points.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts a point if it is neither dominated by nor equal to any
    /// current entry, pruning entries it dominates. Returns whether the
    /// frontier changed.
    pub fn try_insert(&mut self, point: [f64; 2], id: usize) -> bool {
        let blocked = self
            .entries
            .iter()
            .any(|e| dominates(&e.point, &point) || e.point == point);
        if blocked {
            return false;
        }
        self.entries.retain(|e| !dominates(&point, &e.point));
        let pos = self
            .entries
            .partition_point(|e| e.point[0] < point[0]);
        self.entries.insert(pos, FrontierEntry { point, id });
        true
    }

    /// Second-attribute value of the sorted-point polyline at `x`, or
    /// `None` outside the frontier's first-attribute range. This is the
    /// "linear interpolant" hull targets are compared against.
    pub fn linear_interpolant_at(&self, x: f64) -> Option<f64> {
        if self.entries.is_empty() {
            return None;
        }
        let pts = &self.entries;
        if x < pts[0].point[0] || x > pts[pts.len() - 1].point[0] {
            return None;
        }
        for pair in pts.windows(2) {
            let (a, b) = (pair[0].point, pair[1].point);
            if x >= a[0] && x <= b[0] {
                if b[0] == a[0] {
                    return Some(a[1].max(b[1]));
                }
                let t = (x - a[0]) / (b[0] - a[0]);
                return Some(a[1] + t * (b[1] - a[1]));
            }
        }
        Some(pts[pts.len() - 1].point[1])
    }
}

// =============================================================================
// Interpolation targets
// =============================================================================

/// `alpha · a + (1 − alpha) · b`, with `alpha` strictly inside `(0, 1)`.
///
/// # Errors
///
/// Fails when `alpha` is outside the open interval or lengths differ.
pub fn linear_interp(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::Domain(format!(
            "interpolation coefficient must lie in (0, 1), got {alpha}"
        )));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "linear_interp",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| alpha * x + (1.0 - alpha) * y)
        .collect())
}

/// Vertices of the upper convex hull of the frontier, left to right
/// (monotone chain; collinear interior points are dropped). Input must be
/// sorted by ascending first coordinate, as [`Frontier::points`] returns.
pub fn upper_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for &p in points {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) >= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull
}

/// Interpolation targets between consecutive upper-convex-hull vertices of
/// the frontier. Because the hull lies on or above the frontier polyline,
/// every target dominates-or-equals the straight-line interpolant at the
/// same first coordinate — the targets lean outward, past the frontier.
///
/// A frontier with fewer than two hull vertices yields no targets.
///
/// # Errors
///
/// Fails when `alpha` is outside `(0, 1)`.
pub fn upper_hull_targets(frontier: &Frontier, alpha: f64) -> Result<Vec<[f64; 2]>> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::Domain(format!(
            "interpolation coefficient must lie in (0, 1), got {alpha}"
        )));
    }
    let hull = upper_hull(&frontier.points());
    Ok(hull
        .windows(2)
        .map(|pair| {
            let t = linear_interp(&pair[0], &pair[1], alpha).expect("alpha checked");
            [t[0], t[1]]
        })
        .collect())
}

/// Smallest Euclidean distance from a candidate target to the frontier.
///
/// # Errors
///
/// Fails on an empty frontier.
pub fn coverage_gap(target: [f64; 2], frontier: &Frontier) -> Result<f64> {
    if frontier.is_empty() {
        return Err(Error::Domain("coverage gap against an empty frontier".into()));
    }
    Ok(frontier
        .entries
        .iter()
        .map(|e| {
            let (dx, dy) = (target[0] - e.point[0], target[1] - e.point[1]);
            (dx * dx + dy * dy).sqrt()
        })
        .fold(f64::INFINITY, f64::min))
}

// =============================================================================
// Frontier quality measures
// =============================================================================

/// Area dominated by the point set relative to `ref_point` (union of the
/// rectangles spanned by each point and the reference). Dominated or
/// duplicate points contribute nothing; points that fail to reach the
/// reference in some coordinate are excluded with a warning on stderr.
pub fn hypervolume(points: &[[f64; 2]], ref_point: [f64; 2]) -> f64 {
    let valid: Vec<AttributeVector> = points
        .iter()
        .filter(|p| p[0] >= ref_point[0] && p[1] >= ref_point[1])
        .map(|p| p.to_vec())
        .collect();
    let excluded = points.len() - valid.len();
    if excluded > 0 {
        eprintln!(
            "hypervolume: excluded {excluded} point(s) below the reference {ref_point:?}"
        );
    }
    if valid.is_empty() {
        return 0.0;
    }
    let kept = extract_nondominated(&valid);
    let mut sorted: Vec<&AttributeVector> = kept.iter().map(|&i| &valid[i]).collect();
    sorted.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    // x ascending means y strictly descending: each point adds a rectangle
    // strip of its own height over the x-range it newly covers.
    let mut area = 0.0;
    let mut prev_x = ref_point[0];
    for p in sorted {
        area += (p[0] - prev_x) * (p[1] - ref_point[1]);
        prev_x = p[0];
    }
    area
}

/// Mean squared Euclidean gap between adjacent frontier points in sorted
/// order; `0` for fewer than two points. Lower is denser.
pub fn sparsity(frontier: &Frontier) -> f64 {
    if frontier.len() < 2 {
        return 0.0;
    }
    let gaps: f64 = frontier
        .entries
        .windows(2)
        .map(|pair| {
            let (a, b) = (pair[0].point, pair[1].point);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            dx * dx + dy * dy
        })
        .sum();
    gaps / (frontier.len() - 1) as f64
}

// =============================================================================
// Frontier search
// =============================================================================

/// How interpolation targets are proposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterpKind {
    /// Between adjacent frontier points.
    Linear,
    /// Between consecutive upper-convex-hull vertices.
    UpperHull,
}

/// Budget and target-proposal settings for the refinement phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementBudget {
    /// Steered generations to spend on refinement.
    pub max_refinements: usize,
    /// Interpolants proposed per adjacent pair: one at `interp_alpha`, or
    /// `K` spread evenly (`k/(K+1)`, `k = 1..K`) when more than one.
    pub interp_per_pair: usize,
    /// Target-proposal scheme.
    pub interp_kind: InterpKind,
    /// Interpolation coefficient used when `interp_per_pair == 1`.
    pub interp_alpha: f64,
}

impl Default for RefinementBudget {
    fn default() -> Self {
        RefinementBudget {
            max_refinements: 40,
            interp_per_pair: 1,
            interp_kind: InterpKind::Linear,
            interp_alpha: 0.5,
        }
    }
}

impl RefinementBudget {
    /// Checks proposal invariants.
    pub fn validate(&self) -> Result<()> {
        if self.interp_per_pair == 0 {
            return Err(Error::InvalidConfig("interp_per_pair must be >= 1".into()));
        }
        if !self.interp_alpha.is_finite()
            || self.interp_alpha <= 0.0
            || self.interp_alpha >= 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "interp_alpha must lie in (0, 1), got {}",
                self.interp_alpha
            )));
        }
        Ok(())
    }

    /// The interpolation coefficients proposed per adjacent pair.
    fn alphas(&self) -> Vec<f64> {
        if self.interp_per_pair == 1 {
            vec![self.interp_alpha]
        } else {
            let k = self.interp_per_pair;
            (1..=k).map(|i| i as f64 / (k + 1) as f64).collect()
        }
    }
}

/// One refinement iteration's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementStep {
    /// The target chosen for the largest coverage gap.
    pub target: [f64; 2],
    /// Full raw scores actually achieved by the steered generation.
    pub achieved: AttributeVector,
    /// Whether the achieved point entered the frontier.
    pub inserted: bool,
    /// Hypervolume after this iteration (never decreases).
    pub hypervolume: f64,
}

/// Per-phase record of one frontier search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxHistory {
    /// Hypervolume of the phase-1 (sampling-only) frontier.
    pub phase1_hypervolume: f64,
    /// One entry per refinement iteration.
    pub iterations: Vec<RefinementStep>,
    /// True when the proposal pool ran out before the budget did.
    pub exhausted_targets: bool,
}

/// A completed frontier search: the frontier plus how it got there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierSearch {
    pub frontier: Frontier,
    pub history: ApproxHistory,
}

/// Builds a pair-restricted target vector: the selected attributes carry
/// the normalized goal with unit weight, all others are inert (weight 0).
fn pair_target(
    scorer: &Scorer,
    attr_pair: [usize; 2],
    goal_raw: [f64; 2],
) -> Result<TargetVector> {
    let specs = scorer.specs();
    let pair_specs = [specs[attr_pair[0]].clone(), specs[attr_pair[1]].clone()];
    let goal_norm = normalize(&goal_raw, &pair_specs)?;
    let mut tau = vec![0.5; scorer.dim()];
    let mut weights = vec![0.0; scorer.dim()];
    for (slot, (&idx, &g)) in attr_pair.iter().zip(&goal_norm).enumerate() {
        let _ = slot;
        tau[idx] = g;
        weights[idx] = 1.0;
    }
    TargetVector::new(tau, weights)
}

fn check_pair(scorer: &Scorer, attr_pair: [usize; 2]) -> Result<()> {
    if attr_pair[0] == attr_pair[1] {
        return Err(Error::InvalidConfig(
            "frontier attribute pair must name two distinct attributes".into(),
        ));
    }
    for idx in attr_pair {
        if idx >= scorer.dim() {
            return Err(Error::InvalidConfig(format!(
                "attribute index {idx} is out of range (scorer has {})",
                scorer.dim()
            )));
        }
    }
    Ok(())
}

fn project(scores: &[f64], attr_pair: [usize; 2]) -> [f64; 2] {
    [scores[attr_pair[0]], scores[attr_pair[1]]]
}

/// Three-phase frontier approximation.
///
/// Phase 1 samples one unsteered generation per prompt and keeps the
/// non-dominated set. Phase 2 proposes interpolation targets between
/// adjacent points (or hull vertices). Phase 3 repeatedly steers toward the
/// proposal with the largest coverage gap (ties: lower first coordinate,
/// then proposal order), inserting achieved scores that are non-dominated
/// and consuming the proposal either way. The per-iteration history records
/// target, achieved scores, and hypervolume, which is non-decreasing by
/// construction.
///
/// Prompts are consumed round-robin during refinement; every generation
/// draws from its own child stream of `rng`, so the search is deterministic
/// for a fixed seed.
#[allow(clippy::too_many_arguments)]
pub fn approximate_frontier(
    gen: &Generator,
    vf: &ValueFunction,
    scorer: &Scorer,
    prompts: &[Vec<u32>],
    attr_pair: [usize; 2],
    budget: &RefinementBudget,
    steer_cfg: &SteerConfig,
    ref_point: [f64; 2],
    rng: &Rng,
) -> Result<FrontierSearch> {
    budget.validate()?;
    steer_cfg.validate()?;
    check_pair(scorer, attr_pair)?;
    if prompts.is_empty() {
        return Err(Error::Domain("frontier search needs at least one prompt".into()));
    }

    // Phase 1: unsteered sampling.
    let mut candidates = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let mut child = rng.child(i as u64);
        let mut record = gen.generate(prompt, &mut child, None)?;
        scorer.score_record(&mut record)?;
        let raw = record.raw_scores.as_ref().expect("scored above");
        candidates.push(FrontierEntry {
            point: project(raw, attr_pair),
            id: i,
        });
    }
    let mut frontier = Frontier::from_candidates(candidates);
    let phase1_hv = hypervolume(&frontier.points(), ref_point);
    let mut history = ApproxHistory {
        phase1_hypervolume: phase1_hv,
        iterations: Vec::new(),
        exhausted_targets: false,
    };

    // Phase 2: interpolation proposals from the phase-1 frontier.
    let mut proposals: Vec<[f64; 2]> = Vec::new();
    let base_points = frontier.points();
    let pairs: Vec<([f64; 2], [f64; 2])> = match budget.interp_kind {
        InterpKind::Linear => base_points.windows(2).map(|w| (w[0], w[1])).collect(),
        InterpKind::UpperHull => {
            let hull = upper_hull(&base_points);
            hull.windows(2).map(|w| (w[0], w[1])).collect()
        }
    };
    for (a, b) in &pairs {
        for alpha in budget.alphas() {
            let t = linear_interp(a, b, alpha)?;
            proposals.push([t[0], t[1]]);
        }
    }

    // Phase 3: gap-directed refinement. Targets steer only the selected
    // pair, so the intervention runs in target-reaching mode regardless of
    // the caller's configured mode.
    let steer_cfg = SteerConfig {
        mode: SteerMode::TargetReaching,
        ..steer_cfg.clone()
    };
    for iter in 0..budget.max_refinements {
        if proposals.is_empty() {
            history.exhausted_targets = true;
            break;
        }
        // Largest coverage gap; ties prefer the lower first coordinate,
        // then earlier proposal order.
        let mut best_idx = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for (i, &t) in proposals.iter().enumerate() {
            let gap = coverage_gap(t, &frontier)?;
            if gap > best_gap || (gap == best_gap && t[0] < proposals[best_idx][0]) {
                best_gap = gap;
                best_idx = i;
            }
        }
        let target_raw = proposals.remove(best_idx);

        let target = pair_target(scorer, attr_pair, target_raw)?;
        let prompt = &prompts[iter % prompts.len()];
        let mut child = rng.child(REFINE_STREAM + iter as u64);
        let record = steer_generate(gen, vf, scorer, prompt, &target, &steer_cfg, &mut child)?;
        let achieved = record.raw_scores.expect("steer_generate scores records");
        let point = project(&achieved, attr_pair);
        let inserted = frontier.try_insert(point, prompts.len() + iter);
        history.iterations.push(RefinementStep {
            target: target_raw,
            achieved,
            inserted,
            hypervolume: hypervolume(&frontier.points(), ref_point),
        });
    }

    Ok(FrontierSearch { frontier, history })
}

/// Naive equal-budget baseline: spend the whole generation budget steering
/// in maximize mode across a uniform grid of preference weights
/// `(w, 1 − w)` over the attribute pair, then keep the non-dominated set.
#[allow(clippy::too_many_arguments)]
pub fn scalarized_grid_frontier(
    gen: &Generator,
    vf: &ValueFunction,
    scorer: &Scorer,
    prompts: &[Vec<u32>],
    attr_pair: [usize; 2],
    budget_total: usize,
    steer_cfg: &SteerConfig,
    rng: &Rng,
) -> Result<Frontier> {
    check_pair(scorer, attr_pair)?;
    if prompts.is_empty() {
        return Err(Error::Domain("grid baseline needs at least one prompt".into()));
    }
    let steer_cfg = SteerConfig {
        mode: SteerMode::Maximize,
        ..steer_cfg.clone()
    };
    let mut candidates = Vec::with_capacity(budget_total);
    for b in 0..budget_total {
        let w = if budget_total > 1 {
            b as f64 / (budget_total - 1) as f64
        } else {
            0.5
        };
        let mut tau = vec![0.5; scorer.dim()];
        let mut weights = vec![0.0; scorer.dim()];
        tau[attr_pair[0]] = 1.0;
        tau[attr_pair[1]] = 1.0;
        weights[attr_pair[0]] = w;
        weights[attr_pair[1]] = 1.0 - w;
        let target = TargetVector::new(tau, weights)?;
        let prompt = &prompts[b % prompts.len()];
        let mut child = rng.child(GRID_STREAM + b as u64);
        let record = steer_generate(gen, vf, scorer, prompt, &target, &steer_cfg, &mut child)?;
        let raw = record.raw_scores.expect("steer_generate scores records");
        candidates.push(FrontierEntry {
            point: project(&raw, attr_pair),
            id: b,
        });
    }
    Ok(Frontier::from_candidates(candidates))
}

// =============================================================================
// Tests
// =============================================================================
