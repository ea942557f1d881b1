//! Acceptance gate, CLI half: end-to-end determinism.
//!
//! Criterion 10 — every CLI command with a fixed config and seed must
//! yield byte-identical report files across two runs. The check runs the
//! whole eight-command pipeline twice into separate directories and
//! compares every produced file byte for byte (reports, checkpoints, and
//! datasets alike — stricter than the criterion demands, and it catches
//! nondeterminism wherever it leaks in).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

const CONFIG: &str = r#"{
    "seed": 11,
    "corpus": {"n_sequences": 64, "min_len": 2, "max_len": 16},
    "generator": {"hidden_dim": 16, "embed_dim": 8, "max_len": 18},
    "pretrain": {"epochs": 3, "batch_size": 16},
    "rollout": {"n_prompts": 16},
    "value_fn": {"hidden_dims": [16], "td": {"batch_size": 8, "max_epochs": 5, "patience": 3, "lr": 0.01}},
    "steer": {"n_prompts": 6, "rounds": 2, "config": {"max_updates": 12}},
    "pareto": {"n_prompts": 4, "budget": {"max_refinements": 6}},
    "distill": {"n_samples": 8, "accept_l1": 2.5, "finetune_epochs": 2}
}"#;

fn run(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_steerlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn steerlab");
    assert!(
        out.status.success(),
        "steerlab {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs the full pipeline with `--out <out>` and returns the out dir.
fn pipeline(dir: &Path, cfg: &str, out: &str) -> PathBuf {
    let out_dir = dir.join(out);
    let common = ["--config", cfg, "--out", out_dir.to_str().unwrap()];
    let with = |head: &[&str]| {
        let mut v: Vec<&str> = head.to_vec();
        v.extend_from_slice(&common);
        v
    };
    run(dir, &with(&["gen-corpus"]));
    run(dir, &with(&["pretrain"]));
    run(dir, &with(&["rollout"]));
    run(dir, &with(&["train-value"]));
    run(dir, &with(&["steer", "--target", "2,2,2"]));
    run(dir, &with(&["pareto"]));
    run(dir, &with(&["distill"]));
    let base = out_dir.join("base_records.jsonl");
    let steered = out_dir.join("steered_records.jsonl");
    run(
        dir,
        &with(&[
            "eval",
            "--base",
            base.to_str().unwrap(),
            "--steered",
            steered.to_str().unwrap(),
            "--target",
            "2,2,2",
        ]),
    );
    out_dir
}

fn file_tree(root: &Path) -> BTreeSet<PathBuf> {
    fn walk(dir: &Path, root: &Path, acc: &mut BTreeSet<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut acc = BTreeSet::new();
    walk(root, root, &mut acc);
    acc
}

#[test]
fn criterion_10_end_to_end_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, CONFIG).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let a = pipeline(dir.path(), cfg, "first");
    let b = pipeline(dir.path(), cfg, "second");

    let files_a = file_tree(&a);
    let files_b = file_tree(&b);
    assert_eq!(files_a, files_b, "the two runs produced different file sets");
    assert!(
        files_a.iter().any(|p| p.extension().is_some_and(|e| e == "json")),
        "no report files were produced"
    );

    let mut diverged = Vec::new();
    for rel in &files_a {
        let bytes_a = std::fs::read(a.join(rel)).unwrap();
        let bytes_b = std::fs::read(b.join(rel)).unwrap();
        if bytes_a != bytes_b {
            diverged.push(rel.clone());
        }
    }
    let pass = diverged.is_empty();
    println!(
        "acceptance 10 (end-to-end determinism): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "files differ between identical runs: {diverged:?}");
}
