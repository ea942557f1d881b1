//! Precise attribute-intensity control for a toy recurrent generator.
//!
//! The crate wires together a small, fully self-contained control loop:
//!
//! 1. [`generator`] — an Elman-style recurrent token generator whose hidden
//!    states are exposed at every decoding step.
//! 2. [`reward`] — analytic sequence attributes (verbosity, rare-token use,
//!    bigram diversity) scored on a fixed 0–4 scale.
//! 3. [`value`] — per-attribute value heads trained with λ-weighted
//!    bootstrapped returns to predict the final normalized scores of a
//!    partial generation from its hidden state.
//! 4. [`steer`] — test-time intervention: gradient descent on the hidden
//!    state against a target-distance objective (or an open-ended
//!    maximize/minimize objective), applied at every decoding step.
//! 5. [`pareto`] — frontier approximation over attribute pairs: dominance
//!    filtering, interpolation targets, coverage-gap refinement,
//!    hypervolume and sparsity measures.
//! 6. [`metrics`] — alignment metrics (L1 distance to target, Likert match
//!    rate, self-BLEU diversity) and the evaluation report.
//! 7. [`distill`] — dataset builders (steered and best-of-N) plus
//!    fine-tuning, so steered behaviour can be baked back into the
//!    generator weights.
//!
//! Everything is deterministic given a seed: randomness flows exclusively
//! through [`rng::Rng`], floats are `f64` end to end, and checkpoints
//! round-trip through a little-endian `f32` container ([`checkpoint`]).
//!
//! The commonly used types are re-exported from the crate root so that
//! downstream code can write `steerlab::Generator` instead of reaching into
//! individual modules.

pub mod attr;
pub mod checkpoint;
pub mod corpus;
pub mod distill;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod pareto;
pub mod reward;
pub mod rng;
pub mod steer;
pub mod value;

pub use attr::{
    denormalize, normalize, weighted_target_loss, AttributeSpec, AttributeVector, TargetVector,
};
pub use corpus::CorpusConfig;
pub use distill::{BonSet, DistillConfig, SteeredSet};
pub use error::Error;
pub use generator::{GenerationRecord, Generator, GeneratorConfig, PretrainConfig};
pub use metrics::EvalReport;
pub use pareto::{Frontier, FrontierSearch, InterpKind, RefinementBudget};
pub use reward::{Scorer, ScoredExample, SyntheticAttribute};
pub use rng::Rng;
pub use steer::{SteerConfig, SteerMode, StepTrace, StopReason};
pub use value::{TdConfig, TrajectorySample, ValueFunction};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
