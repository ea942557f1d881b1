//! Black-box CLI behaviour: exit codes, error messages, artifact guards.

use std::path::Path;
use std::process::{Command, Output};

fn steerlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerlab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to spawn steerlab")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

/// Small-but-complete run configuration: every stage finishes in well
/// under a second at these sizes.
const TINY: &str = r#"{
    "seed": 7,
    "corpus": {"n_sequences": 48, "min_len": 2, "max_len": 16},
    "generator": {"hidden_dim": 16, "embed_dim": 8, "max_len": 18},
    "pretrain": {"epochs": 2, "batch_size": 16},
    "rollout": {"n_prompts": 12},
    "value_fn": {"hidden_dims": [16], "td": {"batch_size": 8, "max_epochs": 4, "patience": 2, "lr": 0.01}},
    "steer": {"n_prompts": 5, "config": {"max_updates": 10}},
    "pareto": {"n_prompts": 4, "budget": {"max_refinements": 6}},
    "distill": {"n_samples": 6, "accept_l1": 2.5, "finetune_epochs": 2}
}"#;

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let help = steerlab(dir.path(), &["--help"]);
    assert!(help.status.success());
    assert!(String::from_utf8_lossy(&help.stdout).contains("steerlab"));

    let version = steerlab(dir.path(), &["--version"]);
    assert!(version.status.success());
}

#[test]
fn unknown_subcommand_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = steerlab(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_config_flag_exits_one_and_points_at_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = steerlab(dir.path(), &["gen-corpus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("configs/example.json"));
}

#[test]
fn unknown_config_key_exits_one_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"steer": {"alphaa": 0.1}}"#);
    let out = steerlab(dir.path(), &["gen-corpus", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("unknown config key `steer.alphaa`"));
}

#[test]
fn unreadable_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = steerlab(dir.path(), &["gen-corpus", "--config", "no-such-file.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_target_arity_exits_one_before_touching_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = steerlab(dir.path(), &["steer", "--config", &cfg, "--target", "2,2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("entries"));
}

#[test]
fn out_of_range_target_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = steerlab(dir.path(), &["steer", "--config", &cfg, "--target", "2,9,2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("outside"));
}

#[test]
fn zero_threads_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = steerlab(dir.path(), &["gen-corpus", "--config", &cfg, "--threads", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("--threads"));
}

#[test]
fn missing_upstream_artifact_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    // No gen-corpus ran, so pretraining has no corpus to read.
    let out = steerlab(dir.path(), &["pretrain", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stale_checkpoint_from_another_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    for cmd in ["gen-corpus", "pretrain"] {
        let out = steerlab(dir.path(), &[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", stderr_of(&out));
    }
    // Same artifacts, different generator shape: the rollout must refuse
    // the checkpoint rather than steer a mismatched model.
    let other = TINY.replace(r#""hidden_dim": 16"#, r#""hidden_dim": 24"#);
    let cfg2 = {
        let path = dir.path().join("other.json");
        std::fs::write(&path, other).unwrap();
        path.to_str().unwrap().to_string()
    };
    let out = steerlab(dir.path(), &["rollout", "--config", &cfg2]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("different generator config"));
}

#[test]
fn seed_override_changes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let a = steerlab(
        dir.path(),
        &["gen-corpus", "--config", &cfg, "--out", "a", "--seed", "1"],
    );
    assert!(a.status.success(), "{}", stderr_of(&a));
    let b = steerlab(
        dir.path(),
        &["gen-corpus", "--config", &cfg, "--out", "b", "--seed", "2"],
    );
    assert!(b.status.success(), "{}", stderr_of(&b));
    let ca = std::fs::read(dir.path().join("a/corpus.jsonl")).unwrap();
    let cb = std::fs::read(dir.path().join("b/corpus.jsonl")).unwrap();
    assert_ne!(ca, cb);
}
