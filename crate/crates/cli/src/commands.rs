//! The pipeline commands.
//!
//! Each command reads artifacts written by earlier stages, never mutates
//! them, and writes its own outputs under the configured directory. All
//! randomness comes from fixed child streams of the config seed (see
//! [`crate::config::stream`]), so rerunning a command with the same
//! config and seed reproduces its artifacts byte for byte.

use std::path::Path;

use steerlab::attr::{normalize, AttributeSpec, TargetVector};
use steerlab::checkpoint::{load_generator, load_value_fn, save_generator, save_value_fn};
use steerlab::corpus::{check_tokens, generate_corpus, read_corpus, sample_prompts, write_corpus};
use steerlab::distill::{build_steered_set, finetune, DistillConfig};
use steerlab::generator::{GenerationRecord, Generator};
use steerlab::metrics::{evaluate, EvalReport};
use steerlab::pareto::approximate_frontier;
use steerlab::reward::{ingest_scored, write_scored, ScoredExample};
use steerlab::rng::Rng;
use steerlab::steer::{iterative_steer, steer_generate};
use steerlab::value::{TrajectorySample, ValueFunction};

use crate::config::{stream, RunConfig};
use crate::report::{canonical_json, write_csv, write_flat_report, write_report, write_text};
use crate::CliError;

fn runtime(e: steerlab::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    Ok(())
}

/// Loads the generator checkpoint and checks it against the config, so a
/// stale artifact from a different run cannot silently feed this one.
fn load_checked_generator(cfg: &RunConfig) -> Result<Generator, CliError> {
    let path = cfg.path(&cfg.io.generator);
    let (gen, attrs) = load_generator(&path).map_err(runtime)?;
    check_attrs(&attrs, cfg, &path)?;
    if gen.config() != &cfg.generator {
        return Err(CliError::Validation(format!(
            "generator checkpoint {} was trained under a different generator \
             config than this run; regenerate it or fix the config",
            path.display()
        )));
    }
    Ok(gen)
}

/// Loads the value-function checkpoint and checks its declared attributes
/// and input width against the generator it will steer.
fn load_checked_value_fn(cfg: &RunConfig, gen: &Generator) -> Result<ValueFunction, CliError> {
    let path = cfg.path(&cfg.io.value_fn);
    let (vf, _lambda, attrs) = load_value_fn(&path).map_err(runtime)?;
    check_attrs(&attrs, cfg, &path)?;
    if vf.input_dim() != gen.hidden_dim() {
        return Err(CliError::Validation(format!(
            "value function {} reads {}-dim states but the generator exposes \
             {}-dim states",
            path.display(),
            vf.input_dim(),
            gen.hidden_dim()
        )));
    }
    Ok(vf)
}

fn check_attrs(found: &[AttributeSpec], cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    if found != cfg.attributes.as_slice() {
        return Err(CliError::Validation(format!(
            "checkpoint {} declares different attributes than the config; \
             it belongs to another run",
            path.display()
        )));
    }
    Ok(())
}

/// `gen-corpus`: samples the synthetic corpus and writes it as JSONL.
pub fn gen_corpus(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let corpus = generate_corpus(&cfg.corpus, &root.child(stream::CORPUS)).map_err(runtime)?;
    let path = cfg.path(&cfg.io.corpus);
    ensure_parent(&path)?;
    write_corpus(&path, &corpus).map_err(runtime)?;
    println!(
        "wrote {} sequences (vocab {}) to {}",
        corpus.len(),
        cfg.corpus.vocab_size,
        path.display()
    );
    Ok(())
}

/// `pretrain`: fits the generator to the corpus and checkpoints it.
pub fn pretrain(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let corpus_path = cfg.path(&cfg.io.corpus);
    let corpus = read_corpus(&corpus_path).map_err(runtime)?;
    check_tokens(&corpus, cfg.corpus.vocab_size).map_err(runtime)?;

    let mut gen = Generator::init(cfg.generator.clone(), &mut root.child(stream::GEN_INIT))
        .map_err(runtime)?;
    let losses = gen
        .pretrain(&corpus, &cfg.pretrain, &mut root.child(stream::PRETRAIN))
        .map_err(runtime)?;

    let gen_path = cfg.path(&cfg.io.generator);
    ensure_parent(&gen_path)?;
    save_generator(&gen_path, &gen, &cfg.attributes).map_err(runtime)?;
    write_csv(
        &cfg.path(&cfg.io.pretrain_loss),
        "epoch,cross_entropy",
        losses
            .iter()
            .enumerate()
            .map(|(i, l)| format!("{i},{l:.6}")),
    )?;
    println!(
        "pretrained {} epochs, cross-entropy {:.4} -> {:.4}, saved {}",
        losses.len(),
        losses.first().copied().unwrap_or(f64::NAN),
        losses.last().copied().unwrap_or(f64::NAN),
        gen_path.display()
    );
    Ok(())
}

/// `rollout`: generates unsteered continuations for fresh prompts, scores
/// them, and writes the scored set for value training.
pub fn rollout(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let gen = load_checked_generator(cfg)?;
    let scorer = cfg.scorer()?;
    let prompts = sample_prompts(
        &cfg.corpus,
        cfg.rollout.n_prompts,
        &root.child(stream::ROLLOUT_PROMPTS),
    )
    .map_err(runtime)?;

    let roll_rng = root.child(stream::ROLLOUT);
    let mut examples = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let mut record = gen
            .generate(prompt, &mut roll_rng.child(i as u64), None)
            .map_err(runtime)?;
        record.prompt_id = i;
        scorer.score_record(&mut record).map_err(runtime)?;
        examples.push(ScoredExample::from_record(&record).map_err(runtime)?);
    }

    let path = cfg.path(&cfg.io.rollouts);
    ensure_parent(&path)?;
    write_scored(&path, &examples).map_err(runtime)?;
    println!("rolled out {} scored prompts to {}", examples.len(), path.display());
    Ok(())
}

/// `train-value`: replays rollouts through the generator to recover
/// hidden-state trajectories, trains the value function on λ-weighted
/// returns, and checkpoints it.
pub fn train_value(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let gen = load_checked_generator(cfg)?;
    let scorer = cfg.scorer()?;
    let specs = scorer.specs();
    let examples = ingest_scored(&cfg.path(&cfg.io.rollouts)).map_err(runtime)?;

    let mut samples = Vec::with_capacity(examples.len());
    for ex in &examples {
        let states = gen.replay_states(&ex.prompt, &ex.output).map_err(runtime)?;
        let norm = normalize(&ex.scores, &specs).map_err(runtime)?;
        samples.push(TrajectorySample::new(states, norm).map_err(runtime)?);
    }

    let mut dims = Vec::with_capacity(cfg.value_fn.hidden_dims.len() + 2);
    dims.push(gen.hidden_dim());
    dims.extend_from_slice(&cfg.value_fn.hidden_dims);
    dims.push(specs.len());
    let mut vf =
        ValueFunction::init(&dims, &mut root.child(stream::VF_INIT)).map_err(runtime)?;
    let report = vf
        .train(&samples, &cfg.value_fn.td, &mut root.child(stream::VF_TRAIN))
        .map_err(runtime)?;

    let vf_path = cfg.path(&cfg.io.value_fn);
    ensure_parent(&vf_path)?;
    save_value_fn(&vf_path, &vf, cfg.value_fn.td.lambda, &cfg.attributes).map_err(runtime)?;
    write_csv(
        &cfg.path(&cfg.io.loss_history),
        "epoch,train_loss,holdout_loss",
        report
            .train_loss
            .iter()
            .zip(&report.holdout_loss)
            .enumerate()
            .map(|(i, (t, h))| format!("{i},{t:.6},{h:.6}")),
    )?;
    println!(
        "trained value function ({} trajectories, kept epoch {} of {}), saved {}",
        samples.len(),
        report.best_epoch,
        report.train_loss.len(),
        vf_path.display()
    );
    Ok(())
}

/// Builds the uniform-weight target vector for a raw-scale target.
fn uniform_target(cfg: &RunConfig, raw: &[f64]) -> Result<TargetVector, CliError> {
    let specs = cfg.scorer()?.specs();
    let tau = normalize(raw, &specs).map_err(|e| CliError::Validation(e.to_string()))?;
    TargetVector::uniform(tau).map_err(|e| CliError::Validation(e.to_string()))
}

/// `steer`: generates base and steered continuations for the same fresh
/// prompts, writes both record sets, and reports alignment metrics.
pub fn steer(cfg: &RunConfig, target_flag: &str) -> Result<(), CliError> {
    let raw = cfg.parse_target(target_flag)?;
    let target = uniform_target(cfg, &raw)?;
    let root = Rng::new(cfg.seed);
    let gen = load_checked_generator(cfg)?;
    let vf = load_checked_value_fn(cfg, &gen)?;
    let scorer = cfg.scorer()?;
    let prompts = sample_prompts(
        &cfg.corpus,
        cfg.steer.n_prompts,
        &root.child(stream::EVAL_PROMPTS),
    )
    .map_err(runtime)?;

    let base_rng = root.child(stream::BASE);
    let steer_rng = root.child(stream::STEER);
    let mut base = Vec::with_capacity(prompts.len());
    let mut steered = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let mut b = gen
            .generate(prompt, &mut base_rng.child(i as u64), None)
            .map_err(runtime)?;
        b.prompt_id = i;
        scorer.score_record(&mut b).map_err(runtime)?;

        let mut s = if cfg.steer.rounds > 1 {
            iterative_steer(
                &gen,
                &vf,
                &scorer,
                prompt,
                &target,
                &cfg.steer.config,
                cfg.steer.rounds,
                &mut steer_rng.child(i as u64),
            )
            .map_err(runtime)?
            .pop()
            .expect("rounds >= 1 yields at least one record")
        } else {
            steer_generate(
                &gen,
                &vf,
                &scorer,
                prompt,
                &target,
                &cfg.steer.config,
                &mut steer_rng.child(i as u64),
            )
            .map_err(runtime)?
        };
        s.prompt_id = i;
        scorer.score_record(&mut s).map_err(runtime)?;
        base.push(b);
        steered.push(s);
    }

    write_records(&cfg.path(&cfg.io.base_records), &base)?;
    write_records(&cfg.path(&cfg.io.steered_records), &steered)?;

    let report = evaluate(&base, &steered, &raw).map_err(runtime)?;
    let prefix = cfg.path(&cfg.io.steer_report);
    let (json_path, _) = write_report(&prefix, &report, EvalReport::csv_header(), &report.csv_row())?;
    println!(
        "steered {} prompts toward [{}]: success {:.3}, mean L1 {:.3}, report {}",
        report.n_total,
        target_flag,
        report.success_rate,
        report.mean_l1,
        json_path.display()
    );
    Ok(())
}

/// `pareto`: maps the trade-off frontier over the configured attribute
/// pair, writing the frontier CSV and the search history JSON.
pub fn pareto(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let gen = load_checked_generator(cfg)?;
    let vf = load_checked_value_fn(cfg, &gen)?;
    let scorer = cfg.scorer()?;
    let prompts = sample_prompts(
        &cfg.corpus,
        cfg.pareto.n_prompts,
        &root.child(stream::EVAL_PROMPTS),
    )
    .map_err(runtime)?;

    let search = approximate_frontier(
        &gen,
        &vf,
        &scorer,
        &prompts,
        cfg.pareto.attr_pair,
        &cfg.pareto.budget,
        &cfg.steer.config,
        cfg.pareto.ref_point,
        &root.child(stream::PARETO),
    )
    .map_err(runtime)?;

    let [ia, ib] = cfg.pareto.attr_pair;
    let frontier_path = cfg.path(&cfg.io.frontier);
    write_csv(
        &frontier_path,
        &format!("{},{},id", cfg.attributes[ia].name, cfg.attributes[ib].name),
        search
            .frontier
            .entries()
            .iter()
            .map(|e| format!("{:.6},{:.6},{}", e.point[0], e.point[1], e.id)),
    )?;
    let history_path = cfg.path(&cfg.io.search_history);
    write_text(&history_path, &canonical_json(&search.history)?)?;

    let final_hv = search
        .history
        .iterations
        .last()
        .map(|s| s.hypervolume)
        .unwrap_or(search.history.phase1_hypervolume);
    println!(
        "frontier over ({}, {}): {} points, hypervolume {:.4} -> {:.4}, wrote {} and {}",
        cfg.attributes[ia].name,
        cfg.attributes[ib].name,
        search.frontier.len(),
        search.history.phase1_hypervolume,
        final_hv,
        frontier_path.display(),
        history_path.display()
    );
    Ok(())
}

/// `distill`: collects steered generations near the configured targets,
/// fine-tunes the generator on the accepted set, and checkpoints the
/// result.
pub fn distill(cfg: &RunConfig) -> Result<(), CliError> {
    let root = Rng::new(cfg.seed);
    let gen = load_checked_generator(cfg)?;
    let vf = load_checked_value_fn(cfg, &gen)?;
    let scorer = cfg.scorer()?;
    let specs = scorer.specs();

    let mut targets = Vec::with_capacity(cfg.distill.targets.len());
    for t in &cfg.distill.targets {
        let tau = normalize(&t.raw, &specs).map_err(|e| CliError::Validation(e.to_string()))?;
        let tv = match &t.weights {
            Some(w) => TargetVector::new(tau, w.clone()),
            None => TargetVector::uniform(tau),
        }
        .map_err(|e| CliError::Validation(e.to_string()))?;
        targets.push(tv);
    }
    let dcfg = DistillConfig {
        n_samples: cfg.distill.n_samples,
        targets,
        accept_l1: cfg.distill.accept_l1,
        finetune_epochs: cfg.distill.finetune_epochs,
        finetune_lr: cfg.distill.finetune_lr,
    };
    dcfg.validate(scorer.dim())
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let prompts = sample_prompts(
        &cfg.corpus,
        cfg.steer.n_prompts,
        &root.child(stream::EVAL_PROMPTS),
    )
    .map_err(runtime)?;
    let set = build_steered_set(
        &gen,
        &vf,
        &scorer,
        &prompts,
        &dcfg,
        &cfg.steer.config,
        &root.child(stream::DISTILL),
    )
    .map_err(runtime)?;

    let dataset_path = cfg.path(&cfg.io.dataset);
    ensure_parent(&dataset_path)?;
    write_scored(&dataset_path, &set.examples).map_err(runtime)?;

    let tuned = finetune(
        &gen,
        &set.examples,
        dcfg.finetune_epochs,
        dcfg.finetune_lr,
        &mut root.child(stream::FINETUNE),
    )
    .map_err(runtime)?;
    let distilled_path = cfg.path(&cfg.io.distilled);
    ensure_parent(&distilled_path)?;
    save_generator(&distilled_path, &tuned, &cfg.attributes).map_err(runtime)?;

    write_flat_report(
        &cfg.path(&cfg.io.distill_report),
        &[
            ("accepted", set.examples.len() as f64),
            ("attempts", set.attempts as f64),
            ("acceptance_ratio", set.acceptance_ratio),
            ("cap_hit", if set.cap_hit { 1.0 } else { 0.0 }),
        ],
    )?;
    println!(
        "distilled {} accepted examples ({} attempts, ratio {:.3}) into {}",
        set.examples.len(),
        set.attempts,
        set.acceptance_ratio,
        distilled_path.display()
    );
    Ok(())
}

/// `eval`: scores an existing pair of record files against a target.
pub fn eval(
    cfg: &RunConfig,
    base_path: &Path,
    steered_path: &Path,
    target_flag: &str,
) -> Result<(), CliError> {
    let raw = cfg.parse_target(target_flag)?;
    let base = read_records(base_path)?;
    let steered = read_records(steered_path)?;
    let report = evaluate(&base, &steered, &raw).map_err(runtime)?;
    let prefix = cfg.path(&cfg.io.eval_report);
    let (json_path, csv_path) =
        write_report(&prefix, &report, EvalReport::csv_header(), &report.csv_row())?;
    println!(
        "evaluated {} pairs: success {:.3}, mean L1 {:.3}, self-BLEU {:.3}; wrote {} and {}",
        report.n_total,
        report.success_rate,
        report.mean_l1,
        report.self_bleu,
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

/// Writes generation records as JSONL, one record per line.
fn write_records(path: &Path, records: &[GenerationRecord]) -> Result<(), CliError> {
    let mut text = String::new();
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| CliError::Runtime(format!("record serialization failed: {e}")))?;
        text.push_str(&line);
        text.push('\n');
    }
    write_text(path, &text)
}

/// Reads generation records from JSONL, citing the offending line on
/// failure.
fn read_records(path: &Path) -> Result<Vec<GenerationRecord>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: GenerationRecord = serde_json::from_str(line).map_err(|e| {
            CliError::Runtime(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}
