use serde::{Deserialize, Serialize};

use super::heads::{model_attention, HeadAbstract, HeadClass, HeadSet, DEFAULT_TAU};
use super::{axpy, dot, norm, sub};
use crate::error::Result;
use crate::model::Transformer;

/// Probe magnitudes for the empirical line.
pub const PROBE_POINTS: [f64; 3] = [1e5, 1e6, 1e7];

/// Sign counts of the context tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextPartition {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl ContextPartition {
    pub fn of(context: &[f64]) -> Self {
        Self {
            positive: context.iter().filter(|&&c| c > 0.0).count(),
            negative: context.iter().filter(|&&c| c < 0.0).count(),
            zero: context.iter().filter(|&&c| c == 0.0).count(),
        }
    }
}

/// `Attn(x) ~ slope * x + intercept`, per model coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
}

/// A line pushed through the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarLine {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalLine {
    pub line: Line,
    /// Secant slope between the two inner probes.
    pub inner_slope: Vec<f64>,
    /// Decoded model output along the same probes, when the model has no
    /// layer normalization or feedforward block.
    pub decoded: Option<ScalarLine>,
    /// `||slope - predicted|| / max(||predicted||, sum_h ||zeta_h||)`.
    pub slope_residual: f64,
    /// `||intercept - predicted|| / max(||predicted||, sum_h ||zeta_h|| (1 + max |c_j|))`.
    pub intercept_residual: f64,
    /// `||slope - inner_slope|| / max(||slope||, sum_h ||zeta_h||)`.
    pub linearity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalAsymptote {
    /// `+1` toward `+inf`, `-1` toward `-inf`.
    pub direction: f64,
    pub probes: Vec<f64>,
    pub predicted: Line,
    pub predicted_decoded: ScalarLine,
    /// `None` when a probe evaluated to a non-finite value.
    pub empirical: Option<EmpiricalLine>,
    pub diagnostic: Option<String>,
}

/// The limit as written in the proof, toward `+inf`, next to the exact one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiteralLimit {
    pub line: Line,
    /// `||literal - exact||` over slope and intercept, relative to the
    /// exact magnitude.
    pub discrepancy: f64,
    pub disagrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoteReport {
    pub positional_zeroed: bool,
    pub scale: f64,
    pub tau: f64,
    pub heads: Vec<HeadAbstract>,
    pub partition: ContextPartition,
    pub plus: DirectionalAsymptote,
    pub minus: DirectionalAsymptote,
    pub literal_plus: LiteralLimit,
}

impl AsymptoteReport {
    /// Worst linearity residual over both directions; infinite when either
    /// direction failed to evaluate.
    pub fn worst_linearity(&self) -> f64 {
        [&self.plus, &self.minus]
            .iter()
            .map(|d| d.empirical.as_ref().map_or(f64::INFINITY, |e| e.linearity_residual))
            .fold(0.0, f64::max)
    }

    pub fn worst_slope_residual(&self) -> f64 {
        [&self.plus, &self.minus]
            .iter()
            .map(|d| d.empirical.as_ref().map_or(f64::INFINITY, |e| e.slope_residual))
            .fold(0.0, f64::max)
    }
}

/// Exact limit line of the attention output toward `direction * inf`.
///
/// Per head: `H+` puts all weight on the query (slope `zeta`); `H-` puts it
/// on the context tokens maximizing `alpha * direction * c_j` (a constant);
/// `H0` averages uniformly over context and query.
pub fn predicted_line(set: &HeadSet, context: &[f64], direction: f64) -> Line {
    let d = set.d_model();
    let mut slope = vec![0.0; d];
    let mut intercept = vec![0.0; d];
    let p = context.len() as f64;
    let total: f64 = context.iter().sum();
    for h in &set.heads {
        match h.class {
            HeadClass::Positive => axpy(&mut slope, 1.0, &h.zeta),
            HeadClass::Zero => {
                axpy(&mut slope, 1.0 / (p + 1.0), &h.zeta);
                axpy(&mut intercept, total / (p + 1.0), &h.zeta);
            }
            HeadClass::Negative if context.is_empty() => axpy(&mut slope, 1.0, &h.zeta),
            HeadClass::Negative => {
                let key = |c: f64| -direction * c;
                let best = context.iter().map(|&c| key(c)).fold(f64::NEG_INFINITY, f64::max);
                let winners: Vec<f64> = context.iter().copied().filter(|&c| key(c) == best).collect();
                let mean = winners.iter().sum::<f64>() / winners.len() as f64;
                axpy(&mut intercept, mean, &h.zeta);
            }
        }
    }
    Line { slope, intercept }
}

/// The `S_1 + S_2 + S_3` limit toward `+inf` exactly as the proof states it:
/// `S_1 = x sum_{H+} zeta_h`, `S_2 = sum_{H-} (sum_{X-} x_j / p + x |X0|) zeta_h`,
/// `S_3 = sum_{H0} (sum_j x_j / (p+1) + x p / (p+1)) zeta_h`.
pub fn literal_line(set: &HeadSet, context: &[f64]) -> Line {
    let d = set.d_model();
    let mut slope = vec![0.0; d];
    let mut intercept = vec![0.0; d];
    let p = context.len() as f64;
    let part = ContextPartition::of(context);
    let neg_sum: f64 = context.iter().filter(|&&c| c < 0.0).sum();
    let total: f64 = context.iter().sum();
    for h in &set.heads {
        match h.class {
            HeadClass::Positive => axpy(&mut slope, 1.0, &h.zeta),
            HeadClass::Negative => {
                if p > 0.0 {
                    axpy(&mut intercept, neg_sum / p, &h.zeta);
                }
                axpy(&mut slope, part.zero as f64, &h.zeta);
            }
            HeadClass::Zero => {
                axpy(&mut slope, p / (p + 1.0), &h.zeta);
                axpy(&mut intercept, total / (p + 1.0), &h.zeta);
            }
        }
    }
    Line { slope, intercept }
}

fn decode(set: &HeadSet, line: &Line, residual: bool) -> ScalarLine {
    let mut slope = line.slope.clone();
    if residual {
        axpy(&mut slope, 1.0, &set.embedding);
    }
    ScalarLine {
        slope: dot(&slope, &set.decoder),
        intercept: dot(&line.intercept, &set.decoder),
    }
}

fn secant(a: (f64, &[f64]), b: (f64, &[f64])) -> Vec<f64> {
    a.1.iter().zip(b.1).map(|(fa, fb)| (fb - fa) / (b.0 - a.0)).collect()
}

fn directional(model: &Transformer<f64>, set: &HeadSet, context: &[f64], direction: f64) -> Result<DirectionalAsymptote> {
    let cfg = &model.config;
    let predicted = predicted_line(set, context, direction);
    let predicted_decoded = decode(set, &predicted, cfg.use_residual);
    let probes: Vec<f64> = PROBE_POINTS.iter().map(|m| direction * m).collect();
    let mut values = Vec::with_capacity(probes.len());
    for &x in &probes {
        values.push(model_attention(model, context, x)?);
    }
    let mut report = DirectionalAsymptote {
        direction,
        probes: probes.clone(),
        predicted,
        predicted_decoded,
        empirical: None,
        diagnostic: None,
    };
    if let Some(i) = values.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
        report.diagnostic = Some(format!("attention output is non-finite at x = {:e}", probes[i]));
        return Ok(report);
    }

    let inner_slope = secant((probes[0], &values[0]), (probes[1], &values[1]));
    let slope = secant((probes[1], &values[1]), (probes[2], &values[2]));
    let intercept: Vec<f64> = values[2].iter().zip(&slope).map(|(f, s)| f - s * probes[2]).collect();
    let zs = set.zeta_scale();
    let cmax = context.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let pred = &report.predicted;
    let ratio = |num: f64, den: f64| if num == 0.0 { 0.0 } else { num / den };
    let slope_residual = ratio(norm(&sub(&slope, &pred.slope)), norm(&pred.slope).max(zs));
    let intercept_residual = ratio(norm(&sub(&intercept, &pred.intercept)), norm(&pred.intercept).max(zs * (1.0 + cmax)));
    let linearity_residual = ratio(norm(&sub(&slope, &inner_slope)), norm(&slope).max(zs));

    let decoded = if cfg.use_ln || cfg.use_mlp {
        None
    } else {
        let m = super::without_positional(model);
        let mut outs = Vec::with_capacity(2);
        for &x in &probes[1..] {
            let tokens: Vec<f64> = context.iter().copied().chain([x]).collect();
            outs.push(*m.predict_tokens(&tokens)?.last().expect("non-empty"));
        }
        let s = (outs[1] - outs[0]) / (probes[2] - probes[1]);
        Some(ScalarLine { slope: s, intercept: outs[1] - s * probes[2] })
    };
    report.empirical = Some(EmpiricalLine {
        line: Line { slope, intercept },
        inner_slope,
        decoded,
        slope_residual,
        intercept_residual,
        linearity_residual,
    });
    Ok(report)
}

/// Predicted and measured large-`|x|` line of a one-layer model's attention
/// output after `context`, in both directions, with positions zeroed.
pub fn asymptote_estimate(model: &Transformer<f64>, context: &[f64]) -> Result<AsymptoteReport> {
    asymptote_estimate_with(model, context, DEFAULT_TAU)
}

pub fn asymptote_estimate_with(model: &Transformer<f64>, context: &[f64], tau: f64) -> Result<AsymptoteReport> {
    let set = HeadSet::from_model(model, tau)?;
    let plus = directional(model, &set, context, 1.0)?;
    let minus = directional(model, &set, context, -1.0)?;
    let literal = literal_line(&set, context);
    let exact = &plus.predicted;
    let gap = norm(&sub(&literal.slope, &exact.slope)) + norm(&sub(&literal.intercept, &exact.intercept));
    let size = (norm(&exact.slope) + norm(&exact.intercept)).max(set.zeta_scale()).max(f64::MIN_POSITIVE);
    let discrepancy = gap / size;
    Ok(AsymptoteReport {
        positional_zeroed: true,
        scale: set.scale,
        tau,
        partition: ContextPartition::of(context),
        literal_plus: LiteralLimit { line: literal, discrepancy, disagrees: discrepancy > 1e-9 },
        heads: set.heads,
        plus,
        minus,
    })
}
