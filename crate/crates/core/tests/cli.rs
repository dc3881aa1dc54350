use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn seil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seil")).args(args).output().expect("binary runs")
}

// A fast configuration: short training, no selector.
const SMALL: &[&str] = &[
    "--set", "max_rounds=1", "--set", "eval_episodes=4", "--set", "init_steps=200", "--set", "round_steps=100",
    "--set", "rollouts=2", "--set", "select_k=2", "--set", "use_selector=false",
];

fn run_in(dir: &Path, verb: &str, extra: &[&str]) -> Output {
    let mut args = vec![verb, "--out", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    seil(&args)
}

#[test]
fn selftest_passes_and_reports_gradient_error() {
    let out = seil(&["selftest"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max gradient relative error"));
}

#[test]
fn unknown_study_lists_the_valid_ones() {
    let out = seil(&["ablate", "--study", "bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for s in ["components", "rollouts", "selection", "pools", "selector_inputs"] {
        assert!(err.contains(s), "{err}");
    }
}

#[test]
fn usage_errors_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let o = out_dir.to_str().unwrap();
    assert_eq!(seil(&["evolve", "--out", o, "--set", "no_such_key=1"]).status.code(), Some(1));
    assert_eq!(seil(&["evolve", "--out", o, "--set", "tau=1.5"]).status.code(), Some(1));
    assert_eq!(seil(&["evolve", "--out", o, "--set", "novalue"]).status.code(), Some(1));
    assert_eq!(seil(&["frobnicate"]).status.code(), Some(1));
    assert!(!out_dir.exists());
}

#[test]
fn evolve_is_reproducible_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run_in(&a, "evolve", &["--threads", "1", "--verify"]).status.code(), Some(0));
    assert_eq!(run_in(&b, "evolve", &["--threads", "4"]).status.code(), Some(0));
    for f in ["report.csv", "scored.csv", "config.json", "policy_round0.ckpt", "policy_final.ckpt", "pool.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = fs::read_to_string(a.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 2 * 2 * 9);

    // the echoed config reproduces the run on its own
    let c = dir.path().join("c");
    let cfg = a.join("config.json");
    let out = seil(&["evolve", "--out", c.to_str().unwrap(), "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read(a.join("report.csv")).unwrap(), fs::read(c.join("report.csv")).unwrap());

    let eval = seil(&["eval", a.join("policy_final.ckpt").to_str().unwrap(), "--set", "eval_episodes=2"]);
    assert_eq!(eval.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("ema,"));
}

#[test]
fn eval_rejects_non_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.ckpt");
    fs::write(&p, b"not a checkpoint").unwrap();
    assert_eq!(seil(&["eval", p.to_str().unwrap()]).status.code(), Some(2));
    let missing = dir.path().join("missing.ckpt");
    assert_eq!(seil(&["eval", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn gen_demos_and_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run_in(d, "gen-demos", &["--verify", "--set", "shots=2"]).status.code(), Some(0));
    let text = fs::read_to_string(d.join("expert_demos.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 1 + 16);
    assert_eq!(run_in(d, "train-baseline", &[]).status.code(), Some(0));
    assert!(d.join("policy_round0.ckpt").exists());
    assert_eq!(fs::read_to_string(d.join("report.csv")).unwrap().lines().count(), 1 + 18);
}
