use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transformer;
use crate::tasks::PromptBatch;

/// Decoded model output at query `x` after `context`.
pub fn query_output(model: &Transformer<f64>, context: &[f64], x: f64) -> Result<f64> {
    let tokens: Vec<f64> = context.iter().copied().chain([x]).collect();
    Ok(*model.predict_tokens(&tokens)?.last().expect("non-empty"))
}

/// Output spread over one decade `[to / 10, to]` of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecadeSpread {
    pub from: f64,
    pub to: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnLimitReport {
    pub use_ln: bool,
    pub positional: bool,
    pub grid: Vec<f64>,
    pub outputs: Vec<f64>,
    /// Every decade window ending at a grid point.
    pub decades: Vec<DecadeSpread>,
    /// Ratio of each decade spread to the previous one; `None` after a
    /// zero spread.
    pub growth: Vec<Option<f64>>,
    /// Largest pairwise output difference over the top decade.
    pub top_spread: f64,
    /// `1e-3 * (1 + |f(x_max)|)`.
    pub tolerance: f64,
    pub constant_limit: bool,
}

fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// Checks whether the model's output settles to a constant as the query
/// grows along an ascending positive `grid`.
pub fn ln_limit_probe(model: &Transformer<f64>, context: &[f64], grid: &[f64]) -> Result<LnLimitReport> {
    if model.config.d_model < 2 {
        return Err(Error::InvalidConfig("layer normalization needs a vector of length at least 2".into()));
    }
    if grid.len() < 2 || grid[0] <= 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig("grid must be positive, strictly ascending and hold two points".into()));
    }
    let outputs = grid
        .iter()
        .map(|&x| query_output(model, context, x))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("model output at x = {:e}", grid[i])));
    }
    let mut decades = Vec::new();
    for (i, &to) in grid.iter().enumerate() {
        let from = to / 10.0;
        if grid[0] > from * (1.0 + 1e-12) {
            continue;
        }
        let window: Vec<f64> = grid
            .iter()
            .zip(&outputs)
            .take(i + 1)
            .filter(|(&x, _)| x >= from * (1.0 - 1e-12))
            .map(|(_, &f)| f)
            .collect();
        decades.push(DecadeSpread { from, to, spread: spread(&window) });
    }
    let growth = decades
        .windows(2)
        .map(|w| (w[0].spread > 0.0).then(|| w[1].spread / w[0].spread))
        .collect();
    let top = *grid.last().expect("two points");
    let top_window: Vec<f64> = grid
        .iter()
        .zip(&outputs)
        .filter(|(&x, _)| x >= top / 10.0 * (1.0 - 1e-12))
        .map(|(_, &f)| f)
        .collect();
    let top_spread = spread(&top_window);
    let tolerance = 1e-3 * (1.0 + outputs.last().expect("two points").abs());
    Ok(LnLimitReport {
        use_ln: model.config.use_ln,
        positional: model.config.use_positional,
        grid: grid.to_vec(),
        outputs,
        decades,
        growth,
        top_spread,
        tolerance,
        constant_limit: top_spread < tolerance,
    })
}

/// Geometric grid over `[x_lo, x_hi]` mirrored to both signs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundarySpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub points_per_decade: usize,
    /// Largest relative spread over the final decade that counts as a plateau.
    pub tolerance: f64,
    /// Floor of the plateau magnitude used as denominator.
    pub abs_floor: f64,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self {
            x_lo: 10.0,
            x_hi: 1e4,
            points_per_decade: 10,
            tolerance: 0.01,
            abs_floor: 1e-9,
        }
    }
}

impl BoundarySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_lo > 0.0 && self.x_hi >= 10.0 * self.x_lo && self.x_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "boundary sweep needs 0 < x_lo and x_hi >= 10 x_lo (got {}, {})",
                self.x_lo, self.x_hi
            )));
        }
        if self.points_per_decade == 0 || !(self.tolerance > 0.0) || !(self.abs_floor > 0.0) {
            return Err(Error::InvalidConfig("points_per_decade, tolerance and abs_floor must be positive".into()));
        }
        Ok(())
    }

    /// Ascending magnitudes from `x_lo` to `x_hi` inclusive.
    pub fn magnitudes(&self) -> Vec<f64> {
        let decades = (self.x_hi / self.x_lo).log10();
        let n = (decades * self.points_per_decade as f64).ceil() as usize;
        (0..=n)
            .map(|i| if i == n { self.x_hi } else { self.x_lo * 10f64.powf(decades * i as f64 / n as f64) })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Mean output over the final decade.
    pub value: f64,
    /// Smallest `|x|` from which every output stays within tolerance of `value`.
    pub onset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSweep {
    pub direction: f64,
    pub xs: Vec<f64>,
    pub outputs: Vec<f64>,
    /// `(max - min) / max(|mean|, abs_floor)` over the final decade.
    pub final_decade_variation: f64,
    pub plateau: Option<Plateau>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub spec: BoundarySpec,
    pub minus: DirectionSweep,
    pub plus: DirectionSweep,
    /// Lower of the two plateau values, when both directions plateau.
    pub b_minus: Option<f64>,
    /// Higher of the two plateau values, when both directions plateau.
    pub b_plus: Option<f64>,
    /// "bounded", "bounded toward one side" or "unbounded within sweep".
    pub status: String,
    pub max_abs_output: f64,
}

fn sweep(f: &dyn Fn(f64) -> Result<f64>, spec: &BoundarySpec, direction: f64) -> Result<DirectionSweep> {
    let xs: Vec<f64> = spec.magnitudes().iter().map(|m| direction * m).collect();
    let outputs = xs.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    if let Some(i) = outputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("output at x = {:e}", xs[i])));
    }
    let cut = spec.x_hi / 10.0 * (1.0 - 1e-12);
    let last: Vec<f64> = xs.iter().zip(&outputs).filter(|(x, _)| x.abs() >= cut).map(|(_, &v)| v).collect();
    let mean = last.iter().sum::<f64>() / last.len() as f64;
    let scale = mean.abs().max(spec.abs_floor);
    let final_decade_variation = spread(&last) / scale;
    let plateau = (final_decade_variation < spec.tolerance).then(|| {
        let band = spec.tolerance * scale;
        let start = outputs.iter().rposition(|v| (v - mean).abs() > band).map_or(0, |i| i + 1);
        Plateau { value: mean, onset: xs[start.min(xs.len() - 1)].abs() }
    });
    Ok(DirectionSweep { direction, xs, outputs, final_decade_variation, plateau })
}

/// Sweeps `f` over `-x_hi..-x_lo` and `x_lo..x_hi` and reports where the
/// output stops moving.
pub fn boundary_probe(f: &dyn Fn(f64) -> Result<f64>, spec: &BoundarySpec) -> Result<BoundaryReport> {
    spec.validate()?;
    let minus = sweep(f, spec, -1.0)?;
    let plus = sweep(f, spec, 1.0)?;
    let (b_minus, b_plus, status) = match (&minus.plateau, &plus.plateau) {
        (Some(a), Some(b)) => (Some(a.value.min(b.value)), Some(a.value.max(b.value)), "bounded"),
        (None, None) => (None, None, "unbounded within sweep"),
        _ => (None, None, "bounded toward one side"),
    };
    let max_abs_output = minus.outputs.iter().chain(&plus.outputs).fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(BoundaryReport {
        spec: spec.clone(),
        minus,
        plus,
        b_minus,
        b_plus,
        status: status.into(),
        max_abs_output,
    })
}

/// Decoded prediction of every layer at the query of `prompt`.
pub fn layer_trace(model: &Transformer<f64>, prompt: &PromptBatch) -> Result<Vec<f64>> {
    let out = model.forward(prompt, true)?;
    Ok(out.trace.expect("trace requested").layer_predictions)
}

/// Fraction of prompts where the last layer's decoded prediction is closer
/// to the query target than the first layer's.
pub fn last_layer_dominance(model: &Transformer<f64>, prompts: &[PromptBatch]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(Error::InvalidConfig("no prompts".into()));
    }
    let mut wins = 0;
    for p in prompts {
        let trace = layer_trace(model, p)?;
        let target = p.targets[p.len - 1];
        if (trace[trace.len() - 1] - target).abs() < (trace[0] - target).abs() {
            wins += 1;
        }
    }
    Ok(wins as f64 / prompts.len() as f64)
}
