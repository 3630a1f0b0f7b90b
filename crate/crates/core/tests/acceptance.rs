//! One test per acceptance criterion; each prints a `PASS`/`FAIL` line.
//!
//! Criteria 4 to 10 need the four desk models. They are trained once (f32,
//! 10 to 20 minutes each on one core) into `target/acceptance-models/` and
//! reused while their `run.json` matches. Set `ICL_ACCEPTANCE_RETRAIN=1` to
//! force retraining or `ICL_ACCEPTANCE_DIR` to keep them elsewhere.

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use icl_core::analysis::{
    asymptote_estimate, boundary_probe, ln_limit_probe, query_output, witness_check, AnalysisSpec, BoundarySpec,
    WitnessSpec,
};
use icl_core::checks::{closed_form_suite, gradient_suite, random_model, single_loop_epsilon};
use icl_core::evaluator::{epsilon_sigma, ood_sweep, EvalReport, LeastSquares, Predictor, TestSpec, Vary, ZeroPredictor};
use icl_core::model::{Checkpoint, ModelConfig};
use icl_core::presets::desk_suite;
use icl_core::tasks::stream;
use icl_core::trainer::{train_or_reuse, TrainEvent};
use icl_core::Model;
use rand::Rng as _;

fn line(id: &str, passed: bool, detail: String) {
    println!("criterion {id}: {} {detail}", if passed { "PASS" } else { "FAIL" });
}

fn models_dir() -> PathBuf {
    if let Ok(d) = std::env::var("ICL_ACCEPTANCE_DIR") {
        return PathBuf::from(d);
    }
    let target = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target");
    std::fs::create_dir_all(&target).unwrap();
    target.canonicalize().unwrap().join("acceptance-models")
}

struct Desk {
    l2_ln: Model,
    l2_noln: Model,
    l1_ln: Model,
    l1_noln: Model,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let root = models_dir();
        let retrain = std::env::var("ICL_ACCEPTANCE_RETRAIN").is_ok_and(|v| v == "1");
        let load = |name: &str| {
            let (_, mut cfg) = desk_suite(1).into_iter().find(|(n, _)| *n == name).unwrap();
            let dir = root.join(format!("{name}-f32"));
            if retrain {
                let _ = std::fs::remove_file(dir.join("run.json"));
            }
            cfg.out_dir = Some(dir.clone());
            let (_, reused) = train_or_reuse::<f32>(cfg, |e| {
                if let TrainEvent::Validation(v) = e {
                    eprintln!("{name}: step {} validation {:.5}", v.step, v.loss);
                }
            })
            .unwrap();
            if !reused {
                eprintln!("{name}: trained into {}", dir.display());
            }
            Checkpoint::<f64>::load(dir.join("checkpoints/final.ckpt")).unwrap().model
        };
        Desk {
            l2_ln: load("l2-ln"),
            l2_noln: load("l2-noln"),
            l1_ln: load("l1-ln"),
            l1_noln: load("l1-noln"),
        }
    })
}

fn reference_spec() -> TestSpec {
    TestSpec { seed: 1, ..TestSpec::default() }
}

fn sigma_one(model: &Model) -> EvalReport {
    ood_sweep(model, &reference_spec(), &[1.0], Vary::Coefficients).unwrap().remove(0)
}

fn probe_context() -> Vec<f64> {
    AnalysisSpec { seed: 1, ..AnalysisSpec::default() }.context().unwrap()
}

fn without_positional(m: &Model) -> Model {
    let mut m = m.clone();
    m.config.use_positional = false;
    m
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn spearman_oracle() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), 1.0);
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
    assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
}

#[test]
fn criterion_01_gradient_oracle() {
    let start = Instant::now();
    let results = gradient_suite(50, 2024).unwrap();
    let worst = results.iter().map(|(_, g)| g.max_rel_error).fold(0.0, f64::max);
    let kinks: usize = results.iter().map(|(_, g)| g.kinks).sum();
    let secs = start.elapsed().as_secs_f64();
    let passed = worst < 1e-4 && secs < 60.0;
    line("1", passed, format!("max rel error {worst:.2e} over 50 configs ({kinks} kink entries skipped), {secs:.1}s"));
    assert!(passed);
}

#[test]
fn criterion_02_closed_form_equivalence() {
    let start = Instant::now();
    let worst = closed_form_suite(100, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let passed = worst < 1e-9 && secs < 10.0;
    line("2", passed, format!("max rel gap {worst:.2e} over 100 cases, {secs:.2}s"));
    assert!(passed);
}

#[test]
fn criterion_03_attention_tends_to_a_line() {
    let start = Instant::now();
    let mut rng = stream(2024, "acceptance-heads", 0);
    let mut worst: f64 = 0.0;
    let mut finite = true;
    for case in 0..20 {
        let heads = [1, 2, 4][case % 3];
        let cfg = ModelConfig {
            layers: 1,
            heads,
            d_model: 8,
            max_seq_len: 24,
            use_ln: false,
            use_residual: false,
            use_mlp: false,
            use_positional: false,
            ..ModelConfig::default()
        };
        let model = random_model(cfg, 1.0, &mut rng).unwrap();
        let context: Vec<f64> = (0..10).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
        let r = asymptote_estimate(&model, &context).unwrap();
        for d in [&r.plus, &r.minus] {
            let e = d.empirical.as_ref().unwrap();
            finite &= e.line.slope.iter().chain(&e.line.intercept).all(|v| v.is_finite());
        }
        worst = worst.max(r.worst_linearity());
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = finite && worst < 1e-3 && secs < 10.0;
    line("3", passed, format!("worst slope drift {worst:.2e} across 1e5..1e7, finite both ways: {finite}, {secs:.2}s"));
    assert!(passed);
}

#[test]
fn criterion_04_layer_norm_bounds_the_output() {
    let d = desk();
    let start = Instant::now();
    let with = without_positional(&d.l2_ln);
    let mut plain = with.clone();
    plain.config.use_ln = false;
    let context = probe_context();
    let grid = [1e4, 1e5, 1e6, 1e7];
    let ln = ln_limit_probe(&with, &context, &grid).unwrap();
    let no = ln_limit_probe(&plain, &context, &grid).unwrap();
    let growth_ok = !no.growth.is_empty() && no.growth.iter().all(|g| g.is_some_and(|g| g >= 10.0 * (1.0 - 1e-6)));
    let secs = start.elapsed().as_secs_f64();
    let passed = ln.constant_limit && growth_ok && secs < 10.0;
    line(
        "4",
        passed,
        format!(
            "LN top-decade spread {:.2e} (tol {:.2e}); no-LN growth per decade {:?}, {secs:.2}s",
            ln.top_spread,
            ln.tolerance,
            no.growth.iter().map(|g| g.map(|g| (g * 100.0).round() / 100.0)).collect::<Vec<_>>()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_05a_desk_training_error() {
    let r = sigma_one(&desk().l2_ln);
    let passed = r.eps_sigma <= 0.05;
    line("5a", passed, format!("eps_sigma(1) = {:.4e} (<= 0.05)", r.eps_sigma));
    assert!(passed);
}

#[test]
fn criterion_05b_desk_training_vs_least_squares() {
    let r = sigma_one(&desk().l2_ln);
    let passed = r.eps_sigma <= 10.0 * r.eps_star;
    line(
        "5b",
        passed,
        format!("eps_sigma(1) = {:.4e} vs 10 x eps* = {:.4e} (least squares on noiseless data)", r.eps_sigma, 10.0 * r.eps_star),
    );
    assert!(passed);
}

#[test]
fn criterion_06_error_rises_with_sigma() {
    let sigmas: Vec<f64> = (1..=10).map(f64::from).collect();
    let reports = ood_sweep(&desk().l2_ln, &reference_spec(), &sigmas, Vary::Coefficients).unwrap();
    let eps: Vec<f64> = reports.iter().map(|r| r.eps_sigma).collect();
    let rho = spearman(&sigmas, &eps);
    let passed = rho >= 0.9;
    let shown: Vec<String> = eps.iter().map(|e| format!("{e:.3}")).collect();
    line("6", passed, format!("Spearman {rho:.3}; eps_sigma = [{}]", shown.join(", ")));
    assert!(passed);
}

fn boundary_of(model: &Model, spec: &BoundarySpec) -> icl_core::analysis::BoundaryReport {
    let context = probe_context();
    boundary_probe(&|x| query_output(model, &context, x), spec).unwrap()
}

fn acceptance_boundary() -> BoundarySpec {
    BoundarySpec { tolerance: 0.05, ..BoundarySpec::default() }
}

#[test]
fn criterion_07_boundary_values() {
    let r = boundary_of(&desk().l2_ln, &acceptance_boundary());
    let finite = r.b_minus.is_some_and(f64::is_finite) && r.b_plus.is_some_and(f64::is_finite);
    let passed = r.status == "bounded" && finite;
    line(
        "7",
        passed,
        format!(
            "{}; B- = {:?}, B+ = {:?}; final-decade variation {:.2e} (-) / {:.2e} (+)",
            r.status, r.b_minus, r.b_plus, r.minus.final_decade_variation, r.plus.final_decade_variation
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_08_layer_norm_ablation() {
    let d = desk();
    let spec = acceptance_boundary();
    let ln = boundary_of(&d.l2_ln, &spec);
    let no = boundary_of(&d.l2_noln, &spec);
    let ratio = no.max_abs_output / ln.max_abs_output;
    let no_plateau = no.minus.plateau.is_none() && no.plus.plateau.is_none();
    let passed = ratio >= 5.0 && no_plateau;
    line(
        "8",
        passed,
        format!(
            "max |prediction| {:.3e} without LN vs {:.3e} with LN (x{ratio:.1}); without LN: {}",
            no.max_abs_output, ln.max_abs_output, no.status
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_09_depth_soft() {
    let d = desk();
    let two = sigma_one(&d.l2_ln).eps_sigma;
    let one = sigma_one(&d.l1_ln).eps_sigma;
    let passed = one >= 3.0 * two;
    line("9", passed, format!("(soft) eps_sigma(1): 1 layer {one:.4e}, 2 layers {two:.4e}, ratio {:.2}", one / two));
    if !passed {
        eprintln!("warning: criterion 9 is soft and does not fail the suite");
    }
}

#[test]
fn criterion_10_witness() {
    let model = &desk().l1_noln;
    let start = Instant::now();
    let w = witness_check(model, &WitnessSpec::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let passed = w.violated && !w.degenerate && w.squared_error.is_finite() && secs < 1.0;
    line(
        "10",
        passed,
        format!(
            "a = {:e}, x_j = {:.3e} (p = {}): squared error {:.3e} >= epsilon {:.0e}; lemma sides {:.3e} vs {:.3e}; {secs:.3}s",
            w.a,
            w.x_bound,
            w.xs.len(),
            w.squared_error,
            w.epsilon,
            w.lemma_lhs,
            w.lemma_rhs
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_11_metric_oracle() {
    let mut rng = stream(2024, "acceptance-metric", 0);
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, max_seq_len: 20, ..ModelConfig::default() };
    let random = random_model(cfg, 0.3, &mut rng).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for degree in [1, 2] {
        let predictors: [&dyn Predictor; 3] = [&random, &LeastSquares { degree }, &ZeroPredictor];
        for p in predictors {
            for seed in 0..3 {
                let spec = TestSpec { n_functions: 5, n_batches: 2, n_points: 10, degree, seed, ..TestSpec::default() };
                let fast = epsilon_sigma(p, &spec).unwrap().eps;
                let slow = single_loop_epsilon(p, &spec).unwrap();
                let rel = if fast == slow { 0.0 } else { (fast - slow).abs() / slow.abs().max(fast.abs()) };
                worst = worst.max(rel);
                count += 1;
            }
        }
    }
    let passed = worst <= 1e-12;
    line("11", passed, format!("max rel gap {worst:.2e} over {count} predictor/spec pairs"));
    assert!(passed);
}
