use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_icl-lab");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ICL_LAB_SEED").output().expect("spawn icl-lab")
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "model": { "layers": 1, "heads": 2, "d_model": 4, "max_seq_len": 24 },
        "steps": 6,
        "batch_size": 4,
        "curriculum": { "min_len": 2, "max_len": 11, "ramp_fraction": 0.5 },
        "eval_every": 3,
        "eval_prompts": 4,
        "checkpoint_every": 3,
        "seed": 5
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn train(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let cfg = tiny_config(dir);
    let out = dir.join(name);
    let mut args = vec!["train", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn train_writes_a_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = train(tmp.path(), "r", &[]);
    assert!(run_dir.join("checkpoints/final.ckpt").is_file());
    assert!(run_dir.join("checkpoints/step-000003.ckpt").is_file());
    let metrics = fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 7);
    let snapshot: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    // defaults not present in the input file are echoed
    assert_eq!(snapshot["optimizer"]["lr"], 1e-4);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("MANIFEST")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["seed_source"], "config");
    assert_eq!(manifest["precision"], "f64");
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a == "checkpoints/final.ckpt"));
}

#[test]
fn manifest_reproduces_the_run_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let first = train(tmp.path(), "a", &["--seed", "11", "--no-residual"]);
    let again = tmp.path().join("b");
    let o = run(&["train", "--quiet", "--config", first.join("MANIFEST").to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(first.join("checkpoints/final.ckpt")).unwrap(),
        fs::read(again.join("checkpoints/final.ckpt")).unwrap()
    );
    let cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(again.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 11);
    assert_eq!(cfg["model"]["use_residual"], false);
}

#[test]
fn env_seed_applies_and_flag_wins() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    for (name, extra, want, source) in [("e", vec![], 42, "env"), ("f", vec!["--seed", "7"], 7, "flag")] {
        let out = tmp.path().join(name);
        let mut args = vec!["train", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend(extra);
        let o = Command::new(BIN).args(&args).env("ICL_LAB_SEED", "42").output().unwrap();
        assert!(o.status.success());
        let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("MANIFEST")).unwrap()).unwrap();
        assert_eq!(m["seed"], want);
        assert_eq!(m["seed_source"], source);
    }
}

#[test]
fn sweep_eval_analyze_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train(tmp.path(), "model-a", &[]);
    let b = train(tmp.path(), "model-b", &["--seed", "9"]);
    for dir in [&a, &b] {
        let o = run(&[
            "sweep", "--run", dir.to_str().unwrap(), "--ckpt", "final", "--sigma", "1..10", "--vary", "coefficients",
            "--n-functions", "2", "--n-batches", "2", "--n-points", "8",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "sigma,eps_sigma,eps_star,eps_zero,r_eps,n_functions,seed");
        assert_eq!(csv.lines().count(), 11);
    }

    let o = run(&["eval", "--run", a.to_str().unwrap(), "--sigma", "2", "--n-functions", "2", "--n-batches", "2", "--n-points", "8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(a.join("eval.csv")).unwrap().lines().count(), 2);

    let spec = tmp.path().join("analysis-spec.json");
    fs::write(&spec, r#"{"n_context": 5, "trace_prompts": 4}"#).unwrap();
    let o = run(&["analyze", "--run", a.to_str().unwrap(), "--spec", spec.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["asymptote"].is_object());

    let table = tmp.path().join("table.md");
    let runs = format!("{},{}", a.display(), b.display());
    let o = run(&["report", "--runs", &runs, "--out", table.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&table).unwrap();
    assert_eq!(text.lines().next().unwrap(), "| models \\ σ | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 |");
    assert!(text.contains("| model-a |") && text.contains("| model-b |"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), text);
}

#[test]
fn selftest_passes() {
    let o = run(&["selftest"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS")).count(), 3);
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--config", "/nonexistent.json", "--out", "x"]).status.code(), Some(2));
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("r");
    let bad_regime = run(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--regime", "T9"]);
    assert_eq!(bad_regime.status.code(), Some(2));
    let no_out = run(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(no_out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&no_out.stderr).contains("--out"));
    let bad_sigma = run(&["sweep", "--run", tmp.path().to_str().unwrap(), "--sigma", "5..1"]);
    assert_eq!(bad_sigma.status.code(), Some(2));
}

#[test]
fn schema_version_mismatch_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = train(tmp.path(), "r", &[]);
    let path = run_dir.join("MANIFEST");
    let text = fs::read_to_string(&path).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 99");
    fs::write(&path, text).unwrap();
    let o = run(&["train", "--config", path.to_str().unwrap(), "--out", tmp.path().join("again").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema version"));
}

#[test]
fn runtime_failures_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let run_dir = train(tmp.path(), "r", &[]);
    fs::write(run_dir.join("checkpoints/final.ckpt"), b"not a checkpoint").unwrap();
    let o = run(&["eval", "--run", run_dir.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
