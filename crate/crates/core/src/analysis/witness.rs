use serde::{Deserialize, Serialize};

use super::heads::{HeadSet, DEFAULT_TAU};
use super::{dot, without_positional};
use crate::error::{Error, Result};
use crate::model::Transformer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessSpec {
    /// Approximation bound on the squared error.
    pub epsilon: f64,
    /// Number of in-context examples.
    pub p: usize,
    /// First slope tried; doubled until the bound breaks.
    pub a_start: f64,
    pub a_max: f64,
}

impl Default for WitnessSpec {
    fn default() -> Self {
        Self { epsilon: 0.01, p: 40, a_start: 1.0, a_max: 1e12 }
    }
}

/// The construction for target `g(x) = a x` at query `x = 0`, with context
/// inputs `x_j = epsilon / (||B|| p)` where `B = sum_h zeta_h . W_dec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub positional_zeroed: bool,
    pub spec: WitnessSpec,
    /// `|B|`.
    pub product_norm: f64,
    pub degenerate: bool,
    pub a: f64,
    pub x_bound: f64,
    pub xs: Vec<f64>,
    pub query: f64,
    /// Model output at the query.
    pub prediction: f64,
    /// `(a + 1) (sum_j x_j) B / (2p + 1)`: uniform attention over the
    /// `2p + 1` tokens when the query embeds to zero.
    pub closed_form_prediction: f64,
    pub target: f64,
    /// Left side of the approximation bound: `|f(x) - g(x)|^2`.
    pub squared_error: f64,
    /// Right side of the approximation bound.
    pub epsilon: f64,
    pub violated: bool,
    /// `squared_error - epsilon`.
    pub margin: f64,
    /// `((sum_j x_j)(a + 1) |B|)^2`.
    pub lemma_lhs: f64,
    /// `epsilon (1 + (a + 1) sum_j x_j)^2`.
    pub lemma_rhs: f64,
    pub note: String,
}

/// Evaluates the construction for one slope `a`.
pub fn witness_at(model: &Transformer<f64>, spec: &WitnessSpec, a: f64) -> Result<WitnessReport> {
    let cfg = &model.config;
    if cfg.use_ln || cfg.use_mlp {
        return Err(Error::InvalidConfig("the witness covers attention-only models without layer normalization".into()));
    }
    if spec.p == 0 || !(spec.epsilon > 0.0) {
        return Err(Error::InvalidConfig("witness needs p >= 1 and epsilon > 0".into()));
    }
    let set = HeadSet::from_model(model, DEFAULT_TAU)?;
    let b = dot(&set.zeta_sum(), &set.decoder);
    let product_norm = b.abs();
    let degenerate = product_norm == 0.0;
    let p = spec.p as f64;
    let x_bound = if degenerate { spec.epsilon / p } else { spec.epsilon / (product_norm * p) };
    let xs = vec![x_bound; spec.p];
    let sum_x: f64 = xs.iter().sum();

    let mut tokens = Vec::with_capacity(2 * spec.p + 1);
    for &x in &xs {
        tokens.push(x);
        tokens.push(a * x);
    }
    let query = 0.0;
    tokens.push(query);
    let m = without_positional(model);
    let prediction = *m.predict_tokens(&tokens)?.last().expect("non-empty");
    let target = a * query;
    let squared_error = (prediction - target).powi(2);
    let violated = squared_error >= spec.epsilon;
    let note = if degenerate {
        "|B| = 0: the output at x = 0 vanishes for every context, so this specialization cannot separate".into()
    } else if violated {
        format!("squared error {squared_error:.3e} at x = 0 exceeds epsilon {:.3e} for g(x) = {a} x", spec.epsilon)
    } else {
        format!("squared error {squared_error:.3e} stays below epsilon {:.3e} for a = {a}", spec.epsilon)
    };
    Ok(WitnessReport {
        positional_zeroed: true,
        spec: spec.clone(),
        product_norm,
        degenerate,
        a,
        x_bound,
        xs,
        query,
        prediction,
        closed_form_prediction: (a + 1.0) * sum_x * b / (2.0 * p + 1.0),
        target,
        squared_error,
        epsilon: spec.epsilon,
        violated,
        margin: squared_error - spec.epsilon,
        lemma_lhs: (sum_x * (a + 1.0) * product_norm).powi(2),
        lemma_rhs: spec.epsilon * (1.0 + (a + 1.0) * sum_x).powi(2),
        note,
    })
}

/// Doubles `a` from `a_start` until the construction breaks the bound or
/// `a_max` is passed; returns the last evaluation.
pub fn witness_check(model: &Transformer<f64>, spec: &WitnessSpec) -> Result<WitnessReport> {
    if !(spec.a_start > 0.0) || !(spec.a_max >= spec.a_start) {
        return Err(Error::InvalidConfig("witness needs 0 < a_start <= a_max".into()));
    }
    let mut a = spec.a_start;
    loop {
        let report = witness_at(model, spec, a)?;
        if report.violated || report.degenerate || 2.0 * a > spec.a_max {
            return Ok(report);
        }
        a *= 2.0;
    }
}
