//! Run configuration: one JSON document drives every command.
//!
//! The file is strict: any key the schema does not know is rejected with
//! the dotted path of the first offender, so a typo cannot silently fall
//! back to a default. Every section *may* be omitted, in which case its
//! defaults apply — an empty object `{}` is a complete, runnable
//! configuration.
//!
//! Randomness is budgeted once here, too: every command derives its
//! generators from fixed child streams of the root seed (see [`stream`]),
//! so a fixed config plus seed reproduces every artifact byte for byte,
//! and commands do not perturb one another's draws.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use steerlab::attr::AttributeSpec;
use steerlab::corpus::CorpusConfig;
use steerlab::generator::{GeneratorConfig, PretrainConfig};
use steerlab::pareto::RefinementBudget;
use steerlab::reward::Scorer;
use steerlab::steer::SteerConfig;
use steerlab::value::TdConfig;

use crate::CliError;

/// Child-stream ids of the root seed, one per pipeline stage. Stages that
/// loop (per-prompt generation, per-attempt steering) split their stream
/// further by item index inside the command.
pub mod stream {
    pub const CORPUS: u64 = 0;
    pub const ROLLOUT_PROMPTS: u64 = 1;
    pub const EVAL_PROMPTS: u64 = 2;
    pub const GEN_INIT: u64 = 3;
    pub const PRETRAIN: u64 = 4;
    pub const ROLLOUT: u64 = 5;
    pub const VF_INIT: u64 = 6;
    pub const VF_TRAIN: u64 = 7;
    pub const BASE: u64 = 8;
    pub const STEER: u64 = 10;
    pub const PARETO: u64 = 11;
    pub const DISTILL: u64 = 12;
    pub const FINETUNE: u64 = 13;
}

/// How many prompts a rollout run samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutSection {
    /// Prompts to generate and score for value-function training.
    pub n_prompts: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        RolloutSection { n_prompts: 256 }
    }
}

/// Value-function shape and trainer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueFnSection {
    /// Hidden layer widths; the input width (generator hidden size) and
    /// output width (attribute count) are added around them.
    pub hidden_dims: Vec<usize>,
    /// TD(λ) trainer hyperparameters.
    pub td: TdConfig,
}

impl Default for ValueFnSection {
    fn default() -> Self {
        ValueFnSection {
            hidden_dims: vec![64, 64],
            td: TdConfig::default(),
        }
    }
}

/// Steering settings shared by the steer, pareto, and distill commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteerSection {
    /// Prompts evaluated by the steer command.
    pub n_prompts: usize,
    /// Steering rounds per prompt; above 1 the steer command re-steers
    /// each prompt and reports the final round.
    pub rounds: usize,
    /// Intervention-loop hyperparameters.
    pub config: SteerConfig,
}

impl Default for SteerSection {
    fn default() -> Self {
        SteerSection {
            n_prompts: 100,
            rounds: 1,
            config: SteerConfig::default(),
        }
    }
}

/// Frontier-approximation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParetoSection {
    /// The two attribute indices whose trade-off is mapped.
    pub attr_pair: [usize; 2],
    /// Hypervolume reference point in raw score units.
    pub ref_point: [f64; 2],
    /// Prompts sampled for the phase-1 sweep (and reused round-robin
    /// during refinement).
    pub n_prompts: usize,
    /// Refinement budget and target-proposal scheme.
    pub budget: RefinementBudget,
}

impl Default for ParetoSection {
    fn default() -> Self {
        ParetoSection {
            attr_pair: [0, 2],
            ref_point: [0.0, 0.0],
            n_prompts: 24,
            budget: RefinementBudget::default(),
        }
    }
}

/// One distillation target on the raw score scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawTarget {
    /// Raw-scale intensity per attribute.
    pub raw: Vec<f64>,
    /// Per-attribute weights; omitted means all ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// Distillation settings: collection targets plus fine-tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillSection {
    /// Accepted examples to collect.
    pub n_samples: usize,
    /// Raw-scale ℓ1 acceptance radius over each target's weighted
    /// attributes.
    pub accept_l1: f64,
    /// Fine-tuning epochs over the accepted set.
    pub finetune_epochs: usize,
    /// Fine-tuning learning rate.
    pub finetune_lr: f64,
    /// Targets cycled through during collection.
    pub targets: Vec<RawTarget>,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            n_samples: 64,
            accept_l1: 1.0,
            finetune_epochs: 20,
            finetune_lr: 0.5,
            targets: vec![RawTarget {
                raw: vec![2.0, 2.0, 2.0],
                weights: None,
            }],
        }
    }
}

/// Output locations. Every relative path is joined onto `out_dir`;
/// absolute paths are taken as given. Report names are prefixes — the
/// writer appends `.json` and `.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Directory that receives every artifact (created on demand).
    pub out_dir: PathBuf,
    /// Synthetic corpus, one JSON token array per line.
    pub corpus: PathBuf,
    /// Pretrained generator checkpoint.
    pub generator: PathBuf,
    /// Pretraining loss history CSV.
    pub pretrain_loss: PathBuf,
    /// Scored rollouts JSONL for value training.
    pub rollouts: PathBuf,
    /// Value-function checkpoint.
    pub value_fn: PathBuf,
    /// Value-training loss history CSV.
    pub loss_history: PathBuf,
    /// Unsteered records JSONL written by the steer command.
    pub base_records: PathBuf,
    /// Steered records JSONL written by the steer command.
    pub steered_records: PathBuf,
    /// Report prefix for the steer command.
    pub steer_report: PathBuf,
    /// Frontier CSV written by the pareto command.
    pub frontier: PathBuf,
    /// Per-iteration search history JSON written by the pareto command.
    pub search_history: PathBuf,
    /// Accepted distillation set JSONL.
    pub dataset: PathBuf,
    /// Fine-tuned generator checkpoint.
    pub distilled: PathBuf,
    /// Report prefix for the distill command.
    pub distill_report: PathBuf,
    /// Report prefix for the eval command.
    pub eval_report: PathBuf,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection {
            out_dir: PathBuf::from("runs"),
            corpus: PathBuf::from("corpus.jsonl"),
            generator: PathBuf::from("generator.ckpt"),
            pretrain_loss: PathBuf::from("pretrain_loss.csv"),
            rollouts: PathBuf::from("rollouts.jsonl"),
            value_fn: PathBuf::from("value_fn.ckpt"),
            loss_history: PathBuf::from("value_loss.csv"),
            base_records: PathBuf::from("base_records.jsonl"),
            steered_records: PathBuf::from("steered_records.jsonl"),
            steer_report: PathBuf::from("steer_report"),
            frontier: PathBuf::from("frontier.csv"),
            search_history: PathBuf::from("search_history.json"),
            dataset: PathBuf::from("distill_dataset.jsonl"),
            distilled: PathBuf::from("distilled.ckpt"),
            distill_report: PathBuf::from("distill_report"),
            eval_report: PathBuf::from("eval_report"),
        }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every stage derives a fixed child stream from it.
    pub seed: u64,
    /// Declared attribute contract; must match the scorer this run
    /// builds, and artifacts are checked against it when loaded.
    pub attributes: Vec<AttributeSpec>,
    /// Synthetic corpus shape.
    pub corpus: CorpusConfig,
    /// Toy generator shape and sampling temperature.
    pub generator: GeneratorConfig,
    /// Generator pretraining settings.
    pub pretrain: PretrainConfig,
    /// Rollout collection settings.
    pub rollout: RolloutSection,
    /// Value-function shape and trainer settings.
    pub value_fn: ValueFnSection,
    /// Steering settings.
    pub steer: SteerSection,
    /// Frontier-approximation settings.
    pub pareto: ParetoSection,
    /// Distillation settings.
    pub distill: DistillSection,
    /// Output locations.
    pub io: IoSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        let generator = GeneratorConfig::default();
        let attributes = standard_specs(&corpus);
        RunConfig {
            seed: 42,
            attributes,
            corpus,
            generator,
            pretrain: PretrainConfig::default(),
            rollout: RolloutSection::default(),
            value_fn: ValueFnSection::default(),
            steer: SteerSection::default(),
            pareto: ParetoSection::default(),
            distill: DistillSection::default(),
            io: IoSection::default(),
        }
    }
}

/// The attribute specs of the standard scorer for a corpus shape.
fn standard_specs(corpus: &CorpusConfig) -> Vec<AttributeSpec> {
    Scorer::standard(corpus.vocab_size as usize, corpus.max_len)
        .expect("standard scorer over a default corpus always builds")
        .specs()
}

impl RunConfig {
    /// Loads and validates a config file, applying `--seed` and `--out`
    /// overrides. All failures here are validation errors (exit 1).
    pub fn load(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<&Path>,
    ) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            CliError::Validation(format!("config {} is not valid JSON: {e}", path.display()))
        })?;
        check_unknown_keys(&value)?;
        // Deep-merge onto the defaults so partial objects work at every
        // nesting level, not just for whole sections. Arrays replace
        // wholesale — half a target list has no sensible meaning.
        let mut merged = serde_json::to_value(RunConfig::default())
            .expect("default config always serializes");
        merge(&mut merged, value);
        let mut cfg: RunConfig = serde_json::from_value(merged).map_err(|e| {
            CliError::Validation(format!("config {}: {e}", path.display()))
        })?;
        if let Some(seed) = seed_override {
            cfg.seed = seed;
        }
        if let Some(out) = out_override {
            cfg.io.out_dir = out.to_path_buf();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-section consistency checks beyond per-type invariants.
    pub fn validate(&self) -> Result<(), CliError> {
        self.corpus.validate().map_err(validation)?;
        self.generator.validate().map_err(validation)?;
        self.pretrain.validate().map_err(validation)?;
        self.value_fn.td.validate().map_err(validation)?;
        self.steer.config.validate().map_err(validation)?;
        self.pareto.budget.validate().map_err(validation)?;
        for spec in &self.attributes {
            spec.validate().map_err(validation)?;
        }

        if self.generator.vocab_size != self.corpus.vocab_size as usize {
            return Err(CliError::Validation(format!(
                "generator.vocab_size ({}) must equal corpus.vocab_size ({})",
                self.generator.vocab_size, self.corpus.vocab_size
            )));
        }
        if self.generator.max_len < self.corpus.max_len {
            return Err(CliError::Validation(format!(
                "generator.max_len ({}) must be at least corpus.max_len ({})",
                self.generator.max_len, self.corpus.max_len
            )));
        }
        let expected = self.scorer()?.specs();
        if self.attributes != expected {
            return Err(CliError::Validation(format!(
                "attributes must describe the standard scorer for this corpus: {}",
                serde_json::to_string(&expected).unwrap_or_default()
            )));
        }
        if self.steer.rounds == 0 {
            return Err(CliError::Validation("steer.rounds must be >= 1".into()));
        }
        if self.steer.n_prompts == 0 || self.rollout.n_prompts == 0 || self.pareto.n_prompts == 0
        {
            return Err(CliError::Validation(
                "rollout.n_prompts, steer.n_prompts, and pareto.n_prompts must be >= 1".into(),
            ));
        }
        let dim = self.attributes.len();
        if self.pareto.attr_pair[0] >= dim
            || self.pareto.attr_pair[1] >= dim
            || self.pareto.attr_pair[0] == self.pareto.attr_pair[1]
        {
            return Err(CliError::Validation(format!(
                "pareto.attr_pair must name two distinct attributes below {dim}"
            )));
        }
        for (i, t) in self.distill.targets.iter().enumerate() {
            if t.raw.len() != dim {
                return Err(CliError::Validation(format!(
                    "distill.targets[{i}].raw has {} entries but the run scores {dim} attributes",
                    t.raw.len()
                )));
            }
            if let Some(w) = &t.weights {
                if w.len() != dim {
                    return Err(CliError::Validation(format!(
                        "distill.targets[{i}].weights has {} entries but the run scores {dim} attributes",
                        w.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The scorer every command of this run uses: the standard synthetic
    /// trio, with the length attribute saturating at the corpus maximum.
    pub fn scorer(&self) -> Result<Scorer, CliError> {
        Scorer::standard(self.corpus.vocab_size as usize, self.corpus.max_len)
            .map_err(|e| CliError::Validation(e.to_string()))
    }

    /// Resolves an artifact path against the output directory.
    pub fn path(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.io.out_dir.join(rel)
        }
    }

    /// Parses a raw-scale `--target "a,b,c"` flag against this run's
    /// attribute arity.
    pub fn parse_target(&self, flag: &str) -> Result<Vec<f64>, CliError> {
        let parts: Vec<&str> = flag.split(',').map(str::trim).collect();
        let mut raw = Vec::with_capacity(parts.len());
        for p in &parts {
            let v: f64 = p.parse().map_err(|_| {
                CliError::Validation(format!("target entry {p:?} is not a number"))
            })?;
            raw.push(v);
        }
        let dim = self.attributes.len();
        if raw.len() != dim {
            return Err(CliError::Validation(format!(
                "target has {} entries but the run scores {dim} attributes",
                raw.len()
            )));
        }
        for (i, (v, spec)) in raw.iter().zip(&self.attributes).enumerate() {
            if !v.is_finite() || *v < spec.min_raw || *v > spec.max_raw {
                return Err(CliError::Validation(format!(
                    "target[{i}] = {v} is outside {} bounds [{}, {}]",
                    spec.name, spec.min_raw, spec.max_raw
                )));
            }
        }
        Ok(raw)
    }
}

fn validation(e: steerlab::Error) -> CliError {
    CliError::Validation(e.to_string())
}

/// Overlays `user` onto `base`: objects merge key by key, everything
/// else (scalars, arrays) replaces the default outright.
fn merge(base: &mut serde_json::Value, user: serde_json::Value) {
    match (base, user) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(user_map)) => {
            for (key, sub) in user_map {
                match base_map.get_mut(&key) {
                    Some(slot) => merge(slot, sub),
                    None => {
                        base_map.insert(key, sub);
                    }
                }
            }
        }
        (slot, user) => *slot = user,
    }
}

/// Rejects the first key anywhere in `value` that the schema does not
/// know, reporting its dotted path.
///
/// The schema is the serialization of the default config itself — every
/// known key appears there, because no field is ever skipped except
/// optional ones listed in [`OPTIONAL_KEYS`]. Arrays of objects are
/// checked against an exemplar element for the same reason.
fn check_unknown_keys(value: &serde_json::Value) -> Result<(), CliError> {
    let schema = serde_json::to_value(RunConfig::default())
        .expect("default config always serializes");
    walk("", value, &schema)
}

/// `(path, key)` pairs that are legal but absent from the serialized
/// default because they are optional.
const OPTIONAL_KEYS: &[(&str, &str)] = &[("distill.targets[]", "weights")];

fn exemplar(path: &str) -> Option<serde_json::Value> {
    match path {
        "distill.targets[]" => serde_json::to_value(RawTarget {
            raw: Vec::new(),
            weights: None,
        })
        .ok(),
        "attributes[]" => serde_json::to_value(AttributeSpec::new("exemplar", 0.0, 4.0).ok()?).ok(),
        _ => None,
    }
}

fn walk(path: &str, value: &serde_json::Value, schema: &serde_json::Value) -> Result<(), CliError> {
    use serde_json::Value;
    match (value, schema) {
        (Value::Object(map), Value::Object(known)) => {
            for (key, sub) in map {
                let sub_path = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                match known.get(key) {
                    Some(schema_sub) => walk(&sub_path, sub, schema_sub)?,
                    None if OPTIONAL_KEYS.contains(&(path, key.as_str())) => {}
                    None => {
                        return Err(CliError::Validation(format!(
                            "unknown config key `{sub_path}`"
                        )))
                    }
                }
            }
            Ok(())
        }
        (Value::Array(items), _) => {
            let elem_path = format!("{path}[]");
            let elem_schema = schema
                .as_array()
                .and_then(|a| a.first().cloned())
                .or_else(|| exemplar(&elem_path));
            if let Some(elem_schema) = elem_schema {
                for item in items {
                    walk(&elem_path, item, &elem_schema)?;
                }
            }
            Ok(())
        }
        // Leaves: type errors are serde's job, only keys are checked here.
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_a_complete_config() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let bad = serde_json::json!({"steer": {"config": {"alphaa": 0.1}}});
        let err = check_unknown_keys(&bad).unwrap_err();
        let CliError::Validation(msg) = err else {
            panic!("expected validation error");
        };
        assert!(msg.contains("steer.config.alphaa"), "got: {msg}");
    }

    #[test]
    fn unknown_keys_inside_arrays_are_rejected() {
        let bad = serde_json::json!({"distill": {"targets": [{"raw": [1, 2, 3], "w8s": [1]}]}});
        let err = check_unknown_keys(&bad).unwrap_err();
        let CliError::Validation(msg) = err else {
            panic!("expected validation error");
        };
        assert!(msg.contains("distill.targets[].w8s"), "got: {msg}");
    }

    #[test]
    fn optional_target_weights_are_accepted() {
        let good =
            serde_json::json!({"distill": {"targets": [{"raw": [1, 2, 3], "weights": [1, 0, 1]}]}});
        check_unknown_keys(&good).unwrap();
    }

    #[test]
    fn partial_nested_sections_merge_onto_defaults() {
        let user = serde_json::json!({
            "seed": 7,
            "value_fn": {"td": {"lr": 0.003}},
            "steer": {"config": {"alpha": 0.2}}
        });
        let mut merged = serde_json::to_value(RunConfig::default()).unwrap();
        merge(&mut merged, user);
        let cfg: RunConfig = serde_json::from_value(merged).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.value_fn.td.lr, 0.003);
        // Untouched siblings keep their defaults.
        assert_eq!(cfg.value_fn.td.lambda, TdConfig::default().lambda);
        assert_eq!(cfg.steer.config.alpha, 0.2);
        assert_eq!(cfg.steer.config.max_updates, SteerConfig::default().max_updates);
        cfg.validate().unwrap();
    }

    #[test]
    fn target_parsing_enforces_arity_and_bounds() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.parse_target("2, 2, 2").unwrap(), vec![2.0, 2.0, 2.0]);
        let err = cfg.parse_target("4,4").unwrap_err();
        assert!(err.to_string().contains("2 entries"), "got: {err}");
        let err = cfg.parse_target("1,2,9").unwrap_err();
        assert!(err.to_string().contains("outside"), "got: {err}");
        let err = cfg.parse_target("a,b,c").unwrap_err();
        assert!(err.to_string().contains("not a number"), "got: {err}");
    }

    #[test]
    fn cross_section_checks_catch_mismatches() {
        let mut cfg = RunConfig::default();
        cfg.generator.vocab_size = 32;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.pareto.attr_pair = [1, 1];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.distill.targets[0].raw = vec![1.0];
        assert!(cfg.validate().is_err());
    }
}
