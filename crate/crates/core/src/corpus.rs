//! Synthetic pretraining corpus with controllable attribute spread.
//!
//! Each sequence realizes two discrete *register dials*, eight levels
//! apiece. A **style** level sets the per-token stopping hazard and the
//! rare-half bias of every draw, so it controls expected length and token
//! rarity together (rare-heavy registers run long, common-heavy ones stop
//! early). A **focus** level sets the width of the token window used
//! inside each vocabulary half — from the whole half down to a single
//! token — so it controls how quickly a sequence exhausts its distinct
//! bigrams.
//!
//! Half the sequences open with two *register markers* — reserved tokens
//! that announce the style and focus levels outright, the way markup or
//! prosody marks register in natural text. The other half omit the
//! markers and let the register show only through the content statistics.
//! A recurrent model fit to this mix must learn to carry the announced
//! register across the whole sequence and to infer it from content when
//! it is not announced; either way the register ends up as a small set of
//! persistent directions in the hidden state.
//!
//! That is the property the rest of the crate leans on. Every mechanism
//! here is memoryless and per-token — a token's distribution and the stop
//! hazard depend only on the two carried dials, never on counters or
//! per-sequence lookup tables — so each scored attribute corresponds to a
//! smooth re-weighting of the generator's per-token softmax along those
//! carried directions. A hidden-state edit can therefore move every
//! attribute in either direction, which is exactly the leverage a
//! test-time intervention needs.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::generator::{BOS, EOS, SEP};
use crate::rng::Rng;
use crate::Result;

/// Register levels per dial.
pub const LEVELS: u32 = 8;
/// First style-marker token id (markers span `3..3+LEVELS`).
pub const STYLE_MARKER_BASE: u32 = 3;
/// First focus-marker token id (markers span `3+LEVELS..3+2·LEVELS`).
pub const FOCUS_MARKER_BASE: u32 = STYLE_MARKER_BASE + LEVELS;
/// First ordinary content token id.
pub const CONTENT_BASE: u32 = FOCUS_MARKER_BASE + LEVELS;

/// Shape of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Sequences to produce.
    pub n_sequences: usize,
    /// Shortest sequence length (before the end-of-sequence marker).
    pub min_len: usize,
    /// Longest sequence length.
    pub max_len: usize,
    /// Token-id space; ids `3..19` are register markers, content tokens
    /// fill `[19, vocab_size)`, and ids at or above `vocab_size / 2`
    /// count as the rare half.
    pub vocab_size: u32,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_sequences: 512,
            min_len: 2,
            max_len: 40,
            vocab_size: 64,
        }
    }
}

impl CorpusConfig {
    /// Checks invariants: the vocabulary must leave room for content
    /// tokens on both sides of the rare threshold, beyond the reserved
    /// ids and register markers.
    pub fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 {
            return Err(Error::InvalidConfig("n_sequences must be >= 1".into()));
        }
        if self.min_len == 0 || self.max_len < self.min_len {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= min_len <= max_len, got {}..{}",
                self.min_len, self.max_len
            )));
        }
        if self.vocab_size / 2 <= CONTENT_BASE {
            return Err(Error::InvalidConfig(format!(
                "vocab_size {} leaves no common-half content tokens after \
                 the register markers (need >= {})",
                self.vocab_size,
                2 * (CONTENT_BASE + 1)
            )));
        }
        Ok(())
    }

    /// Common-half content window: `[CONTENT_BASE, vocab/2)`.
    fn common_span(&self) -> u32 {
        self.vocab_size / 2 - CONTENT_BASE
    }

    /// Rare-half content window: `[vocab/2, vocab)`.
    fn rare_span(&self) -> u32 {
        self.vocab_size - self.vocab_size / 2
    }
}

/// The two register dials of one sequence.
struct Register {
    /// Probability that a draw lands in the rare half.
    rare_bias: f64,
    /// Per-token stop probability once past `min_len`.
    hazard: f64,
    /// Tokens drawn per half: the first `width` ids of the half.
    width: u32,
}

impl Register {
    /// Maps discrete levels to the dial values.
    ///
    /// Style level `ℓ` targets the *scored* value `g = (ℓ + 0.5) / 2` on
    /// the 0–4 scale for both of its attributes at once: the rare bias is
    /// `g / 4` directly, and the stop hazard is chosen so that the mean
    /// sequence length — after truncation at `max_len` — comes out at
    /// `g · max_len / 4`. Aligning the two on the same scale puts every
    /// uniform target `[k, k, k]` on a single style level instead of in a
    /// gap between mismatched dials. Focus level sets the per-half token
    /// window width on a geometric scale from the whole half down to a
    /// single token, because distinct-bigram exhaustion responds to the
    /// *log* of the alphabet size.
    fn from_levels(cfg: &CorpusConfig, style_level: u32, focus_level: u32) -> Register {
        let g = (style_level as f64 + 0.5) / (LEVELS as f64 / 4.0);
        let f = (focus_level as f64 + 0.5) / LEVELS as f64;
        let span = (cfg.max_len - cfg.min_len) as f64;
        let target_extra =
            (g / 4.0 * cfg.max_len as f64 - cfg.min_len as f64).clamp(0.02 * span, 0.93 * span);
        let cap = cfg.common_span().min(cfg.rare_span()) as f64;
        Register {
            rare_bias: (g / 4.0).clamp(0.02, 0.98),
            hazard: stop_hazard(target_extra, span),
            width: (cap.powf(1.0 - f).round() as u32).clamp(1, cap as u32),
        }
    }

    /// Draws one content token.
    fn draw(&self, cfg: &CorpusConfig, rng: &mut Rng) -> u32 {
        let base = if rng.next_f64() < self.rare_bias {
            cfg.vocab_size / 2
        } else {
            CONTENT_BASE
        };
        base + rng.below(self.width as usize) as u32
    }
}

/// Per-token stop probability `h` such that the number of content tokens
/// drawn past `min_len` — a geometric count checked after every token and
/// truncated at `span` — averages `mean_extra`: solves
/// `(1 − h)·(1 − (1 − h)^span) / h = mean_extra` by bisection. Solving the
/// truncated mean matters: the length cap eats the geometric tail, so a
/// naive `1 / mean` hazard would leave the long registers well short of
/// their target length.
fn stop_hazard(mean_extra: f64, span: f64) -> f64 {
    let (mut lo, mut hi) = (1e-12_f64, 1.0 - 1e-12_f64);
    for _ in 0..80 {
        let h = 0.5 * (lo + hi);
        let q = 1.0 - h;
        let mean = q * (1.0 - q.powf(span)) / h;
        if mean > mean_extra {
            lo = h;
        } else {
            hi = h;
        }
    }
    0.5 * (lo + hi)
}

/// Draws one sequence: pick the two register levels, announce them with
/// markers half the time, then emit content tokens until the hazard (or
/// the length cap) stops the sequence.
fn sample_sequence(cfg: &CorpusConfig, rng: &mut Rng) -> Vec<u32> {
    let style_level = rng.below(LEVELS as usize) as u32;
    let focus_level = rng.below(LEVELS as usize) as u32;
    let register = Register::from_levels(cfg, style_level, focus_level);
    let announced = rng.next_f64() < 0.5;

    let mut seq = Vec::with_capacity(cfg.min_len + 8);
    if announced {
        seq.push(STYLE_MARKER_BASE + style_level);
        seq.push(FOCUS_MARKER_BASE + focus_level);
    }
    // Markers do not count toward the length dial: an announced sequence
    // carries the same content-length distribution as an unannounced one.
    let mut content = 0usize;
    loop {
        seq.push(register.draw(cfg, rng));
        content += 1;
        if content >= cfg.max_len {
            break;
        }
        if content >= cfg.min_len && rng.next_f64() < register.hazard {
            break;
        }
    }
    seq.push(EOS);
    seq
}

/// Generates the corpus. Sequence `i` draws from child stream `i` of
/// `rng`, so the corpus is reproducible and insensitive to generation
/// order.
pub fn generate_corpus(cfg: &CorpusConfig, rng: &Rng) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    Ok((0..cfg.n_sequences)
        .map(|i| sample_sequence(cfg, &mut rng.child(i as u64)))
        .collect())
}

/// Draws `n` short prompts (1–3 ordinary content tokens, no register
/// markers and no end marker) on child streams disjoint from the corpus
/// by construction of the caller's rng tree. Prompts deliberately leave
/// the register unannounced: what the continuation's register should be
/// is exactly the degree of freedom steering acts on.
pub fn sample_prompts(cfg: &CorpusConfig, n: usize, rng: &Rng) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    let span = (cfg.vocab_size - CONTENT_BASE) as usize;
    Ok((0..n)
        .map(|i| {
            let mut child = rng.child(i as u64);
            let len = 1 + child.below(3);
            (0..len)
                .map(|_| CONTENT_BASE + child.below(span) as u32)
                .collect()
        })
        .collect())
}

// =============================================================================
// Persistence: one JSON token array per line
// =============================================================================

/// Writes a corpus as JSONL, one token array per line.
pub fn write_corpus(path: &Path, corpus: &[Vec<u32>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for seq in corpus {
        serde_json::to_writer(&mut out, seq)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSONL corpus, citing the 1-based line of any malformed entry.
/// Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Vec<u32>>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut corpus = Vec::new();
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: Vec<u32> = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            location: format!("{}:{}", path.display(), idx + 1),
            message: format!("not a token array: {e}"),
        })?;
        corpus.push(seq);
    }
    if corpus.is_empty() {
        return Err(Error::Malformed {
            location: path.display().to_string(),
            message: "corpus file holds no sequences".into(),
        });
    }
    Ok(corpus)
}

/// Verifies that every token in a corpus or prompt set fits a vocabulary
/// and that reserved markers only appear where they belong (`EOS` only
/// terminal, `BOS`/`SEP` nowhere).
pub fn check_tokens(corpus: &[Vec<u32>], vocab_size: u32) -> Result<()> {
    for (i, seq) in corpus.iter().enumerate() {
        for (j, &tok) in seq.iter().enumerate() {
            if tok >= vocab_size {
                return Err(Error::Domain(format!(
                    "sequence {i} token {j}: id {tok} exceeds vocabulary {vocab_size}"
                )));
            }
            if tok == BOS || tok == SEP {
                return Err(Error::Domain(format!(
                    "sequence {i} token {j}: reserved marker {tok} inside content"
                )));
            }
            if tok == EOS && j + 1 != seq.len() {
                return Err(Error::Domain(format!(
                    "sequence {i} token {j}: end marker before the end"
                )));
            }
        }
    }
    Ok(())
}

// =============================================================================
// Tests
// =============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward::Scorer;

    #[test]
    fn corpus_is_deterministic_and_well_formed() {
        let cfg = CorpusConfig {
            n_sequences: 64,
            ..CorpusConfig::default()
        };
        let a = generate_corpus(&cfg, &Rng::new(80)).unwrap();
        let b = generate_corpus(&cfg, &Rng::new(80)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&cfg, &Rng::new(81)).unwrap();
        assert_ne!(a, c);

        check_tokens(&a, cfg.vocab_size).unwrap();
        for seq in &a {
            assert_eq!(*seq.last().unwrap(), EOS);
            let announced = seq[0] < CONTENT_BASE;
            let content = seq.len() - 1 - if announced { 2 } else { 0 };
            assert!((cfg.min_len..=cfg.max_len).contains(&content));
        }
    }

    #[test]
    fn corpus_spans_the_attribute_ranges() {
        let cfg = CorpusConfig {
            n_sequences: 300,
            min_len: 2,
            max_len: 40,
            vocab_size: 64,
        };
        let corpus = generate_corpus(&cfg, &Rng::new(82)).unwrap();
        let scorer = Scorer::standard(cfg.vocab_size as usize, cfg.max_len).unwrap();
        let scores: Vec<Vec<f64>> = corpus
            .iter()
            .map(|seq| scorer.score(&seq[..seq.len() - 1]))
            .collect();
        for attr in 0..3 {
            let lo = scores.iter().map(|s| s[attr]).fold(f64::INFINITY, f64::min);
            let hi = scores
                .iter()
                .map(|s| s[attr])
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(
                lo < 1.0 && hi > 3.0,
                "attribute {attr} spans only [{lo}, {hi}]"
            );
        }
    }

    #[test]
    fn register_markers_announce_half_the_corpus() {
        let cfg = CorpusConfig {
            n_sequences: 400,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg, &Rng::new(85)).unwrap();
        let announced = corpus
            .iter()
            .filter(|seq| (STYLE_MARKER_BASE..CONTENT_BASE).contains(&seq[0]))
            .count();
        assert!(
            (120..=280).contains(&announced),
            "expected roughly half announced, got {announced} of 400"
        );
        for seq in &corpus {
            // Markers appear only as a [style, focus] pair at the start.
            for (j, &tok) in seq.iter().enumerate() {
                let is_marker = (STYLE_MARKER_BASE..CONTENT_BASE).contains(&tok);
                let in_prefix = j == 0 && tok < FOCUS_MARKER_BASE
                    || j == 1 && tok >= FOCUS_MARKER_BASE && tok < CONTENT_BASE;
                assert!(
                    !is_marker || in_prefix,
                    "stray register marker {tok} at position {j}"
                );
            }
        }
    }

    #[test]
    fn prompts_are_short_valid_and_unannounced() {
        let cfg = CorpusConfig::default();
        let a = sample_prompts(&cfg, 20, &Rng::new(83)).unwrap();
        let b = sample_prompts(&cfg, 20, &Rng::new(83)).unwrap();
        assert_eq!(a, b);
        check_tokens(&a, cfg.vocab_size).unwrap();
        for p in &a {
            assert!((1..=3).contains(&p.len()));
            assert!(p.iter().all(|&t| t >= CONTENT_BASE));
        }
    }

    #[test]
    fn corpus_round_trips_through_jsonl() {
        let cfg = CorpusConfig {
            n_sequences: 12,
            ..CorpusConfig::default()
        };
        let corpus = generate_corpus(&cfg, &Rng::new(84)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        write_corpus(&path, &corpus).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), corpus);
    }

    #[test]
    fn malformed_corpus_cites_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        std::fs::write(&path, "[3,4,0]\nnot json\n").unwrap();
        let err = read_corpus(&path).unwrap_err().to_string();
        assert!(err.contains(":2"), "got: {err}");
        std::fs::write(&path, "").unwrap();
        assert!(read_corpus(&path).is_err());
    }

    #[test]
    fn token_checks_catch_violations() {
        assert!(check_tokens(&[vec![3, 99, 0]], 64).is_err()); // out of vocab
        assert!(check_tokens(&[vec![3, 1, 0]], 64).is_err()); // BOS inside
        assert!(check_tokens(&[vec![3, 0, 4]], 64).is_err()); // EOS not terminal
        check_tokens(&[vec![3, 4, 0]], 64).unwrap();
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let ok = CorpusConfig::default();
        ok.validate().unwrap();
        assert!(CorpusConfig { n_sequences: 0, ..ok.clone() }.validate().is_err());
        assert!(CorpusConfig { min_len: 0, ..ok.clone() }.validate().is_err());
        assert!(CorpusConfig { min_len: 9, max_len: 8, ..ok.clone() }.validate().is_err());
        assert!(CorpusConfig { vocab_size: 24, ..ok }.validate().is_err());
    }
}
