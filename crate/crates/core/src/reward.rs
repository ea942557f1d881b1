//! Analytic sequence attributes on a fixed 0–4 scale.
//!
//! Real attribute scorers are learned models; this crate substitutes three
//! closed-form attributes so that every score is exact, instant, and
//! reproducible:
//!
//! - **`length_ratio`** — verbosity: `4 · min(len / max_len, 1)`.
//! - **`rare_fraction`** — rare-token use: `4 · #{tokens ≥ threshold} / len`.
//! - **`distinct_bigram_ratio`** — local diversity:
//!   `4 · distinct bigrams / (len − 1)`, defined as `4` for `len ≤ 1`.
//!
//! The pair (`length_ratio`, `distinct_bigram_ratio`) is deliberately in
//! tension: over a small token support, longer sequences exhaust their
//! distinct bigrams, so pushing one attribute up drags the other down —
//! which is what makes frontier exploration between them non-trivial.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attr::{normalize, AttributeSpec, AttributeVector};
use crate::error::Error;
use crate::generator::{GenerationRecord, EOS};
use crate::Result;

// =============================================================================
// Attribute definitions
// =============================================================================

/// A closed-form attribute over token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticAttribute {
    /// `4 · min(len / max_len, 1)` — saturating verbosity.
    LengthRatio,
    /// `4 · #{tokens with id ≥ threshold} / len`; `0` for empty sequences.
    RareFraction { threshold: u32 },
    /// `4 · distinct bigrams / (len − 1)`; `4` for sequences of length ≤ 1.
    DistinctBigramRatio,
}

impl SyntheticAttribute {
    /// Canonical attribute name used in specs, configs, and reports.
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticAttribute::LengthRatio => "length_ratio",
            SyntheticAttribute::RareFraction { .. } => "rare_fraction",
            SyntheticAttribute::DistinctBigramRatio => "distinct_bigram_ratio",
        }
    }

    /// Scores one token sequence on the raw 0–4 scale.
    fn score(&self, tokens: &[u32], max_len: usize) -> f64 {
        let len = tokens.len();
        match self {
            SyntheticAttribute::LengthRatio => {
                4.0 * (len as f64 / max_len as f64).min(1.0)
            }
            SyntheticAttribute::RareFraction { threshold } => {
                if len == 0 {
                    0.0
                } else {
                    let rare = tokens.iter().filter(|&&t| t >= *threshold).count();
                    4.0 * rare as f64 / len as f64
                }
            }
            SyntheticAttribute::DistinctBigramRatio => {
                if len <= 1 {
                    4.0
                } else {
                    let distinct: HashSet<(u32, u32)> =
                        tokens.windows(2).map(|w| (w[0], w[1])).collect();
                    4.0 * distinct.len() as f64 / (len - 1) as f64
                }
            }
        }
    }
}

// =============================================================================
// Scorer
// =============================================================================

/// A fixed, ordered set of attributes plus the scoring context they need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scorer {
    defs: Vec<SyntheticAttribute>,
    /// Saturation length for `length_ratio`; use the generator's `max_len`.
    max_len: usize,
}

impl Scorer {
    /// Builds a scorer over an explicit attribute list.
    pub fn new(defs: Vec<SyntheticAttribute>, max_len: usize) -> Result<Self> {
        if defs.is_empty() {
            return Err(Error::InvalidConfig("scorer needs at least one attribute".into()));
        }
        if max_len == 0 {
            return Err(Error::InvalidConfig("scorer max_len must be >= 1".into()));
        }
        Ok(Scorer { defs, max_len })
    }

    /// The standard three-attribute testbed: verbosity, rare-token use
    /// (threshold at half the vocabulary), and bigram diversity.
    pub fn standard(vocab_size: usize, max_len: usize) -> Result<Self> {
        Scorer::new(
            vec![
                SyntheticAttribute::LengthRatio,
                SyntheticAttribute::RareFraction {
                    threshold: (vocab_size / 2) as u32,
                },
                SyntheticAttribute::DistinctBigramRatio,
            ],
            max_len,
        )
    }

    /// Number of attributes scored.
    pub fn dim(&self) -> usize {
        self.defs.len()
    }

    /// The attribute definitions, in scoring order.
    pub fn defs(&self) -> &[SyntheticAttribute] {
        &self.defs
    }

    /// Raw-scale bounds for each attribute (all 0–4 here).
    pub fn specs(&self) -> Vec<AttributeSpec> {
        self.defs
            .iter()
            .map(|d| AttributeSpec {
                name: d.name().to_string(),
                min_raw: 0.0,
                max_raw: 4.0,
            })
            .collect()
    }

    /// Scores a token sequence exactly as given (no terminator stripping).
    pub fn score(&self, tokens: &[u32]) -> AttributeVector {
        self.defs
            .iter()
            .map(|d| d.score(tokens, self.max_len))
            .collect()
    }

    /// Content tokens of a record: the output with one trailing terminator
    /// removed. The terminator is framing, not content — an output that
    /// stops immediately should score as empty.
    pub fn content_tokens<'a>(&self, output: &'a [u32]) -> &'a [u32] {
        match output.last() {
            Some(&t) if t == EOS => &output[..output.len() - 1],
            _ => output,
        }
    }

    /// Scores a record in place, filling both raw and normalized scores.
    pub fn score_record(&self, record: &mut GenerationRecord) -> Result<()> {
        let raw = self.score(self.content_tokens(&record.output_tokens));
        let norm = normalize(&raw, &self.specs())?;
        record.raw_scores = Some(raw);
        record.norm_scores = Some(norm);
        Ok(())
    }
}

// =============================================================================
// Scored-example serialization (JSONL)
// =============================================================================

/// One scored generation as stored on disk:
/// `{"prompt": [ints], "output": [ints], "scores": [floats]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredExample {
    pub prompt: Vec<u32>,
    pub output: Vec<u32>,
    /// Raw-scale attribute scores, in scorer order.
    pub scores: AttributeVector,
}

impl ScoredExample {
    /// Projects a scored record to its serializable form.
    ///
    /// # Errors
    ///
    /// Fails if the record has not been scored.
    pub fn from_record(record: &GenerationRecord) -> Result<Self> {
        let scores = record.raw_scores.clone().ok_or_else(|| {
            Error::Domain("record has no raw scores; score it first".into())
        })?;
        Ok(ScoredExample {
            prompt: record.prompt_tokens.clone(),
            output: record.output_tokens.clone(),
            scores,
        })
    }
}

/// Writes scored examples as JSONL, one object per line.
pub fn write_scored(path: &Path, examples: &[ScoredExample]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut file, ex)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Reads scored examples from JSONL, validating every line.
///
/// # Errors
///
/// A malformed line fails with its 1-based line number; scores must be
/// finite and share one arity across the file.
pub fn ingest_scored(path: &Path) -> Result<Vec<ScoredExample>> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    let mut arity: Option<usize> = None;
    for (idx, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let location = format!("{}:{}", path.display(), idx + 1);
        let ex: ScoredExample = serde_json::from_str(&line)
            .map_err(|e| Error::malformed(&location, e.to_string()))?;
        if ex.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::malformed(&location, "non-finite score"));
        }
        match arity {
            None => arity = Some(ex.scores.len()),
            Some(n) if n != ex.scores.len() => {
                return Err(Error::malformed(
                    &location,
                    format!("score arity {} differs from {}", ex.scores.len(), n),
                ));
            }
            _ => {}
        }
        examples.push(ex);
    }
    Ok(examples)
}

// =============================================================================
// Tests
// =============================================================================
