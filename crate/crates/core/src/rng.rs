//! Deterministic random number generation.
//!
//! Every stochastic routine in the crate draws from [`Rng`], a thin wrapper
//! around the ChaCha8 stream cipher (`rand_chacha`). ChaCha8 is a named,
//! publicly specified generator, and `seed_from_u64` expands the seed with
//! the fixed SplitMix64 scheme, so a run is reproducible byte-for-byte
//! across platforms and toolchains. All derived quantities (floats, bounded
//! integers, shuffles) are computed here with explicit arithmetic rather
//! than delegated to distribution crates, keeping the sampled stream under
//! this crate's control.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer, used to derive child seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic generator seeded with a single `u64`.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    /// Creates a generator whose entire stream is a function of `seed`.
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// The seed this generator was constructed with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent generator for a sub-task (one per prompt, per
    /// trajectory, …). Children with distinct `id`s have unrelated streams,
    /// and forking does not advance the parent's stream, so adding or
    /// reordering sub-tasks never perturbs sibling randomness.
    pub fn child(&self, id: u64) -> Rng {
        Rng::new(splitmix64(
            self.seed ^ (id.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ))
    }

    /// Next raw 64-bit word from the stream.
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform `f64` in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        // Top 53 bits scaled by 2^-53: the standard conversion.
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform `f64` in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`, unbiased via rejection sampling.
    ///
    /// # Panics
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below() requires a non-empty range");
        let n = n as u64;
        // Reject the low remainder zone so every residue is equally likely.
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return (x % n) as usize;
            }
        }
    }

    /// Samples an index from an unnormalized, non-negative weight vector.
    ///
    /// Weights are walked as a CDF; if accumulated rounding leaves the draw
    /// past the final cumulative sum, the last positive-weight index wins.
    ///
    /// # Panics
    ///
    /// Panics if `weights` is empty or sums to zero.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        assert!(
            !weights.is_empty() && total > 0.0,
            "categorical() requires positive total weight"
        );
        let draw = self.next_f64() * total;
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last_positive = i;
            }
            acc += w;
            if draw < acc {
                return i;
            }
        }
        last_positive
    }

    /// In-place Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.below(i + 1);
            slice.swap(i, j);
        }
    }
}

// =============================================================================
// Tests
// =============================================================================
