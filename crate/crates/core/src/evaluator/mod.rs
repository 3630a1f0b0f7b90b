//! Batched in-context error `eps_sigma`, its normalized rate, and
//! out-of-distribution sweeps over test-distribution widths.
//!
//! For each of `N` test functions, `N_b` episodes of `N_p` points are
//! drawn. Within an episode the predictor sees growing prefixes; the first
//! `n + 1` predictions for a degree-`n` target are excluded, the remaining
//! squared errors are summed and divided by `N_p`. Episodes are averaged per
//! function and functions are averaged into `eps_sigma`.

mod least_squares;
mod predictor;

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use least_squares::{eval_poly, least_squares_fit};
pub use predictor::{Episode, GroundTruth, LeastSquares, Predictor, ZeroPredictor};

use crate::error::{Error, Result};
use crate::tasks::{sample_function, stream, DistributionSpec, FunctionSpec, Regime};

/// Test distributions and sample sizes; everything random derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestSpec {
    /// `D_I^test`.
    pub inputs: DistributionSpec,
    /// `D_F^test`.
    pub coefficients: DistributionSpec,
    pub n_functions: usize,
    pub n_batches: usize,
    pub n_points: usize,
    pub degree: usize,
    pub seed: u64,
}

impl Default for TestSpec {
    fn default() -> Self {
        Self {
            inputs: DistributionSpec::uniform(1.0),
            coefficients: DistributionSpec::uniform(1.0),
            n_functions: 100,
            n_batches: 64,
            n_points: 41,
            degree: 1,
            seed: 0,
        }
    }
}

impl TestSpec {
    pub fn validate(&self) -> Result<()> {
        self.inputs.validate()?;
        self.coefficients.validate()?;
        if self.n_functions == 0 || self.n_batches == 0 {
            return Err(Error::InvalidConfig("n_functions and n_batches must be positive".into()));
        }
        if self.n_points < self.degree + 2 {
            return Err(Error::InvalidConfig(format!(
                "n_points {} leaves no scored prediction for degree {} (need at least {})",
                self.n_points,
                self.degree,
                self.degree + 2
            )));
        }
        Ok(())
    }

    /// Index of the first scored prediction within an episode (0-based).
    pub fn first_scored(&self) -> usize {
        self.degree + 1
    }
}

/// One test function with its episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub function: FunctionSpec,
    pub episodes: Vec<Episode>,
}

/// Draws the fixed test set of `spec`.
///
/// Function `i` and episode `(i, b)` each own an RNG stream, so changing a
/// distribution's width rescales the same underlying draws.
pub fn test_set(spec: &TestSpec) -> Result<Vec<TestFunction>> {
    spec.validate()?;
    (0..spec.n_functions)
        .map(|i| {
            let mut rng = stream(spec.seed, "test-function", i as u64);
            let function = sample_function(Regime::Standard, &[spec.degree], &spec.coefficients, &[], &mut rng)?;
            let label = format!("test-points-{i}");
            let episodes = (0..spec.n_batches)
                .map(|b| {
                    let mut rng = stream(spec.seed, &label, b as u64);
                    let xs = spec.inputs.sample_n(spec.n_points, &mut rng);
                    let ys = xs.iter().map(|&x| function.eval(x)).collect();
                    Episode { xs, ys }
                })
                .collect();
            Ok(TestFunction { function, episodes })
        })
        .collect()
}

/// `eps_sigma` for one predictor with its per-function and per-episode terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub predictor: String,
    pub eps: f64,
    pub per_function: Vec<f64>,
    /// `[function][episode]` batch errors.
    pub per_batch: Vec<Vec<f64>>,
}

pub fn epsilon_sigma(predictor: &dyn Predictor, spec: &TestSpec) -> Result<Evaluation> {
    epsilon_on(predictor, spec, &test_set(spec)?)
}

/// `eps_sigma` of `predictor` on an already drawn test set.
pub fn epsilon_on(predictor: &dyn Predictor, spec: &TestSpec, set: &[TestFunction]) -> Result<Evaluation> {
    let name = predictor.name();
    let first = spec.first_scored();
    let mut per_function = Vec::with_capacity(set.len());
    let mut per_batch = Vec::with_capacity(set.len());
    for (i, tf) in set.iter().enumerate() {
        let preds = predictor
            .predict(&tf.function, &tf.episodes)
            .map_err(|e| e.context(format!("predictor {name} on test function {i}")))?;
        if preds.len() != tf.episodes.len() {
            return Err(Error::shape("epsilon_sigma", tf.episodes.len(), preds.len()).context(format!("predictor {name}")));
        }
        let mut batches = Vec::with_capacity(tf.episodes.len());
        for (b, (ep, pr)) in tf.episodes.iter().zip(&preds).enumerate() {
            if pr.len() != ep.xs.len() {
                return Err(Error::shape("epsilon_sigma", ep.xs.len(), pr.len()).context(format!("predictor {name}")));
            }
            let sse: f64 = pr[first..].iter().zip(&ep.ys[first..]).map(|(p, y)| (p - y).powi(2)).sum();
            if !sse.is_finite() {
                return Err(Error::NonFinite(format!("predictor {name}, function {i}, episode {b}")));
            }
            batches.push(sse / ep.xs.len() as f64);
        }
        per_function.push(batches.iter().sum::<f64>() / batches.len() as f64);
        per_batch.push(batches);
    }
    let eps = per_function.iter().sum::<f64>() / per_function.len() as f64;
    Ok(Evaluation {
        predictor: name,
        eps,
        per_function,
        per_batch,
    })
}

/// `eps_sigma / |eps_star - eps_zero|`.
pub fn error_rate(eps_sigma: f64, eps_star: f64, eps_zero: f64) -> Result<f64> {
    let denom = (eps_star - eps_zero).abs();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::Degenerate(format!(
            "least-squares error {eps_star} and zero-predictor error {eps_zero} give normalizer {denom}"
        )));
    }
    Ok(eps_sigma / denom)
}

/// A predictor's `eps_sigma` next to the least-squares and zero baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub predictor: String,
    pub spec: TestSpec,
    pub eps_sigma: f64,
    /// Least-squares pipeline error on the same test set.
    pub eps_star: f64,
    /// Zero-predictor error on the same test set.
    pub eps_zero: f64,
    pub r_eps: f64,
    pub per_function: Vec<f64>,
    /// `eps_star` is measured by replaying least squares on every prefix,
    /// not assumed to vanish.
    pub eps_star_source: String,
}

pub fn evaluate(predictor: &dyn Predictor, spec: &TestSpec) -> Result<EvalReport> {
    let set = test_set(spec)?;
    let model = epsilon_on(predictor, spec, &set)?;
    let star = epsilon_on(&LeastSquares { degree: spec.degree }, spec, &set)?;
    let zero = epsilon_on(&ZeroPredictor, spec, &set)?;
    Ok(EvalReport {
        predictor: model.predictor,
        spec: spec.clone(),
        eps_sigma: model.eps,
        eps_star: star.eps,
        eps_zero: zero.eps,
        r_eps: error_rate(model.eps, star.eps, zero.eps)?,
        per_function: model.per_function,
        eps_star_source: "least squares refit on each prefix of the same test set".into(),
    })
}

/// Which test distribution a sweep widens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vary {
    Inputs,
    Coefficients,
    Both,
}

impl FromStr for Vary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inputs" => Ok(Vary::Inputs),
            "coefficients" => Ok(Vary::Coefficients),
            "both" => Ok(Vary::Both),
            other => Err(Error::InvalidConfig(format!("unknown sweep axis {other:?} (inputs|coefficients|both)"))),
        }
    }
}

/// `base` with the distributions selected by `vary` set to width `sigma`.
pub fn widened(base: &TestSpec, sigma: f64, vary: Vary) -> TestSpec {
    let mut spec = base.clone();
    if matches!(vary, Vary::Inputs | Vary::Both) {
        spec.inputs = spec.inputs.with_width(sigma);
    }
    if matches!(vary, Vary::Coefficients | Vary::Both) {
        spec.coefficients = spec.coefficients.with_width(sigma);
    }
    spec
}

/// One report per width, all drawn from the seed of `base`.
pub fn ood_sweep(predictor: &dyn Predictor, base: &TestSpec, sigmas: &[f64], vary: Vary) -> Result<Vec<EvalReport>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidConfig("sigma list is empty".into()));
    }
    sigmas
        .iter()
        .map(|&s| evaluate(predictor, &widened(base, s, vary)).map_err(|e| e.context(format!("sigma {s}"))))
        .collect()
}

/// One line of `sweep.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub eps_sigma: f64,
    pub eps_star: f64,
    pub eps_zero: f64,
    pub r_eps: f64,
    pub n_functions: usize,
    pub seed: u64,
}

impl SweepRow {
    pub fn from_report(sigma: f64, r: &EvalReport) -> Self {
        Self {
            sigma,
            eps_sigma: r.eps_sigma,
            eps_star: r.eps_star,
            eps_zero: r.eps_zero,
            r_eps: r.r_eps,
            n_functions: r.spec.n_functions,
            seed: r.spec.seed,
        }
    }
}

pub fn write_sweep_csv(w: impl Write, rows: &[SweepRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_sweep_csv(r: impl Read) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn save_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::from(e).context(format!("creating {}", path.display())))?;
    write_sweep_csv(file, rows)
}

pub fn load_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    read_sweep_csv(file).map_err(|e| e.context(format!("reading {}", path.display())))
}
