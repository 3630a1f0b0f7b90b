use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use icl_core::analysis::{analyze as run_analysis, save_report, AnalysisSpec};
use icl_core::checks;
use icl_core::evaluator::{evaluate, ood_sweep, save_sweep_csv, widened, SweepRow, TestSpec, Vary};
use icl_core::model::Checkpoint;
use icl_core::scalar::Scalar;
use icl_core::tasks::Regime;
use icl_core::trainer::{RunConfig, TrainEvent, Trainer};
use serde::de::DeserializeOwned;

use crate::run_dir::{load_config, resolve_checkpoint, resolve_seed, Manifest, SEED_ENV};
use crate::{usage, AnalyzeArgs, EvalArgs, Precision, SelftestArgs, SweepArgs, TestArgs, TrainArgs, VaryArg};

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| crate::UsageError(format!("reading {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| crate::UsageError(format!("parsing {what} {}: {e}", path.display())).into())
}

/// Loads `--config`, which may be a run configuration or a MANIFEST.
fn load_train_config(path: &Path) -> Result<(RunConfig, Option<Precision>)> {
    let value: serde_json::Value = read_json(path, "config")?;
    if value.get("schema_version").is_some() && value.get("config").is_some() {
        let dir = path.parent().unwrap_or(Path::new("."));
        let manifest = if path.file_name().is_some_and(|n| n == "MANIFEST") {
            Manifest::load(dir).map_err(|e| crate::UsageError(format!("{e:#}")))?
        } else {
            return usage(format!("{} looks like a manifest but is not named MANIFEST", path.display()));
        };
        let precision = match manifest.precision.as_str() {
            "f32" => Precision::F32,
            _ => Precision::F64,
        };
        return Ok((manifest.config, Some(precision)));
    }
    load_config(path).map(|c| (c, None)).map_err(|e| crate::UsageError(format!("{e:#}")).into())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let (mut cfg, manifest_precision) = match &args.config {
        Some(p) => load_train_config(p)?,
        None => (RunConfig::default(), None),
    };
    let (seed, source) = resolve_seed(cfg.seed, env_seed(), args.seed).map_err(|e| crate::UsageError(format!("{e:#}")))?;
    cfg.seed = seed;
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if args.no_ln {
        cfg.model.use_ln = false;
    }
    if args.no_mlp {
        cfg.model.use_mlp = false;
    }
    if args.no_residual {
        cfg.model.use_residual = false;
    }
    if let Some(d) = args.degrees {
        cfg.task.degrees = d;
    }
    if let Some(r) = &args.regime {
        cfg.task.regime = Regime::parse(r)?;
    }
    if let Some(out) = args.out {
        cfg.out_dir = Some(out);
    }
    let Some(dir) = cfg.out_dir.clone() else {
        return usage("no run directory: pass --out or set out_dir in the config");
    };
    cfg.validate()?;
    let precision = args.precision.or(manifest_precision).unwrap_or(Precision::F64);

    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    let mut manifest = Manifest::new(precision.name(), source, &cfg);
    manifest.save(&dir)?;

    let quiet = args.quiet;
    let observer = move |e: TrainEvent<'_>| {
        if quiet {
            return;
        }
        match e {
            TrainEvent::Step(_) => {}
            TrainEvent::Validation(v) => eprintln!("step {} validation loss {:.6}", v.step, v.loss),
            TrainEvent::Checkpoint(p) => eprintln!("wrote {}", p.display()),
        }
    };
    let final_ckpt = match precision {
        Precision::F64 => run_training::<f64>(cfg, observer)?,
        Precision::F32 => run_training::<f32>(cfg, observer)?,
    };

    manifest.artifacts = list_artifacts(&dir)?;
    manifest.save(&dir)?;
    println!("{}", final_ckpt.display());
    Ok(())
}

fn run_training<T: Scalar>(cfg: RunConfig, observer: impl FnMut(TrainEvent<'_>)) -> Result<PathBuf> {
    let out = Trainer::<T>::new(cfg)?.run(observer)?;
    out.final_checkpoint.context("trainer wrote no final checkpoint")
}

fn list_artifacts(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for sub in [dir.to_path_buf(), dir.join("checkpoints")] {
        for entry in fs::read_dir(&sub)? {
            let path = entry?.path();
            if path.is_file() && path.file_name().is_some_and(|n| n != "MANIFEST") {
                out.push(path.strip_prefix(dir).unwrap_or(&path).display().to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn vary(v: VaryArg) -> Vary {
    match v {
        VaryArg::Inputs => Vary::Inputs,
        VaryArg::Coefficients => Vary::Coefficients,
        VaryArg::Both => Vary::Both,
    }
}

fn test_spec(a: &TestArgs) -> Result<TestSpec> {
    let mut spec: TestSpec = match &a.spec {
        Some(p) => read_json(p, "test spec")?,
        None => TestSpec::default(),
    };
    spec.seed = resolve_seed(spec.seed, env_seed(), a.seed).map_err(|e| crate::UsageError(format!("{e:#}")))?.0;
    if let Some(n) = a.n_functions {
        spec.n_functions = n;
    }
    if let Some(n) = a.n_batches {
        spec.n_batches = n;
    }
    if let Some(n) = a.n_points {
        spec.n_points = n;
    }
    if let Some(d) = a.degree {
        spec.degree = d;
    }
    spec.validate()?;
    Ok(spec)
}

fn load_model(ckpt: &str, run: &Path) -> Result<Checkpoint<f64>> {
    let path = resolve_checkpoint(ckpt, run).map_err(|e| crate::UsageError(format!("{e:#}")))?;
    Checkpoint::<f64>::load(&path).with_context(|| format!("loading {}", path.display()))
}

/// Parses `1..10` (inclusive integer range), `1,2,5` or `3`.
pub fn parse_sigmas(text: &str) -> Result<Vec<f64>> {
    let text = text.trim();
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| crate::UsageError(format!("bad sigma range {text:?}")))?;
        let hi: u32 = hi.trim().parse().map_err(|_| crate::UsageError(format!("bad sigma range {text:?}")))?;
        if lo == 0 || hi < lo {
            return usage(format!("sigma range {text:?} must satisfy 1 <= lo <= hi"));
        }
        return Ok((lo..=hi).map(f64::from).collect());
    }
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| crate::UsageError(format!("bad sigma list {text:?}")))?;
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return usage(format!("sigma values in {text:?} must be positive"));
    }
    Ok(values)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let a = &args.test;
    let base = test_spec(a)?;
    if !(args.sigma > 0.0 && args.sigma.is_finite()) {
        return usage(format!("sigma must be positive, got {}", args.sigma));
    }
    let model = load_model(&a.ckpt, &a.run)?.model;
    let report = evaluate(&model, &widened(&base, args.sigma, vary(a.vary)))?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("eval.csv"));
    save_sweep_csv(&out, &[SweepRow::from_report(args.sigma, &report)])?;
    fs::write(out.with_extension("json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "sigma {} eps_sigma {:.6e} eps_star {:.6e} eps_zero {:.6e} r_eps {:.6e}",
        args.sigma, report.eps_sigma, report.eps_star, report.eps_zero, report.r_eps
    );
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let a = &args.test;
    let sigmas = parse_sigmas(&args.sigma)?;
    let base = test_spec(a)?;
    let model = load_model(&a.ckpt, &a.run)?.model;
    let reports = ood_sweep(&model, &base, &sigmas, vary(a.vary))?;
    let rows: Vec<SweepRow> = sigmas.iter().zip(&reports).map(|(&s, r)| SweepRow::from_report(s, r)).collect();
    let out = a.out.clone().unwrap_or_else(|| a.run.join("sweep.csv"));
    save_sweep_csv(&out, &rows)?;
    for r in &rows {
        println!("sigma {} eps_sigma {:.6e} r_eps {:.6e}", r.sigma, r.eps_sigma, r.r_eps);
    }
    Ok(())
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    let mut spec: AnalysisSpec = match &args.spec {
        Some(p) => read_json(p, "analysis spec")?,
        None => {
            // probe with prompts from the training distribution when it is known
            let mut s = AnalysisSpec::default();
            if let Ok(cfg) = load_config(&args.run.join("config.json")) {
                s.task = cfg.task;
            }
            s
        }
    };
    spec.seed = resolve_seed(spec.seed, env_seed(), args.seed).map_err(|e| crate::UsageError(format!("{e:#}")))?.0;
    let model = load_model(&args.ckpt, &args.run)?.model;
    let report = run_analysis(&model, &spec)?;
    let out = args.out.clone().unwrap_or_else(|| args.run.join("analysis.json"));
    save_report(&out, &report)?;
    println!("boundary: {}", report.boundary.status);
    println!("layer-norm limit constant: {}", report.ln_probe.constant_limit);
    if let Some(w) = &report.witness {
        println!("witness violated: {} (a = {:e})", w.violated, w.a);
    }
    println!("{}", out.display());
    Ok(())
}

pub fn selftest(args: SelftestArgs) -> Result<()> {
    let outcomes = checks::selftest(args.seed)?;
    let mut failed = 0;
    for c in &outcomes {
        println!("{} {}: {:.3e} (threshold {:.0e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        anyhow::bail!("{failed} of {} checks failed", outcomes.len());
    }
    Ok(())
}
