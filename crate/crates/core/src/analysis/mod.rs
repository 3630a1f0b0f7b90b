//! Closed-form one-layer attention, its large-`|x|` line, the layer-norm
//! constant limit, boundary-value probing, layer tracing and the x = 0
//! witness against distribution-free linear ICL.
//!
//! The closed form assumes token `i` embeds to `c_i W`; probes that rely on
//! it run on a copy of the model with the positional table switched off and
//! say so in their reports.

mod asymptote;
mod heads;
mod probes;
mod witness;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use asymptote::{
    asymptote_estimate, asymptote_estimate_with, literal_line, predicted_line, AsymptoteReport, ContextPartition,
    DirectionalAsymptote, EmpiricalLine, Line, LiteralLimit, ScalarLine, PROBE_POINTS,
};
pub use heads::{
    closed_form_attention, model_attention, score_extraction_residual, HeadAbstract, HeadClass, HeadSet, DEFAULT_TAU,
};
pub use probes::{
    boundary_probe, last_layer_dominance, layer_trace, ln_limit_probe, query_output, BoundaryReport, BoundarySpec,
    DecadeSpread, DirectionSweep, LnLimitReport, Plateau,
};
pub use witness::{witness_at, witness_check, WitnessReport, WitnessSpec};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Transformer};
use crate::tasks::{stream, PromptBatch, TaskSpec};

pub const SCHEMA_VERSION: u32 = 1;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// The same model with the positional table switched off.
pub fn without_positional(model: &Transformer<f64>) -> Transformer<f64> {
    let mut m = model.clone();
    m.config.use_positional = false;
    m
}

/// Inputs of [`analyze`]; every random draw derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSpec {
    pub task: TaskSpec,
    /// In-context examples before the query.
    pub n_context: usize,
    pub seed: u64,
    pub tau: f64,
    pub ln_grid: Vec<f64>,
    pub boundary: BoundarySpec,
    pub witness: WitnessSpec,
    /// In-distribution prompts for the last-layer dominance fraction.
    pub trace_prompts: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            task: TaskSpec::default(),
            n_context: 40,
            seed: 0,
            tau: DEFAULT_TAU,
            ln_grid: vec![1e4, 1e5, 1e6, 1e7],
            boundary: BoundarySpec::default(),
            witness: WitnessSpec::default(),
            trace_prompts: 64,
        }
    }
}

impl AnalysisSpec {
    /// The fixed in-distribution prompt whose prefix serves as context.
    pub fn context_prompt(&self) -> Result<PromptBatch> {
        let degrees = self.task.degrees.clone();
        self.task.sample_prompt(&degrees, self.n_context + 1, &mut stream(self.seed, "analysis-context", 0))
    }

    /// Scalar tokens before the query of [`Self::context_prompt`].
    pub fn context(&self) -> Result<Vec<f64>> {
        let p = self.context_prompt()?;
        Ok(p.tokens[..p.tokens.len() - 1].to_vec())
    }

    pub fn trace_set(&self) -> Result<Vec<PromptBatch>> {
        let degrees = self.task.degrees.clone();
        let mut rng = stream(self.seed, "analysis-trace", 0);
        (0..self.trace_prompts)
            .map(|_| self.task.sample_prompt(&degrees, self.n_context + 1, &mut rng))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Per-layer decoded predictions at the context prompt's query.
    pub layers: Vec<f64>,
    pub target: f64,
    /// Fraction of trace prompts where the last layer beats the first.
    pub last_layer_dominance: f64,
}

/// Everything `analyze` writes to `analysis.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub model: ModelConfig,
    pub spec: AnalysisSpec,
    pub context: Vec<f64>,
    /// Which probes ran with the positional table switched off.
    pub notes: Vec<String>,
    pub heads: Option<Vec<HeadAbstract>>,
    pub score_residual: Option<f64>,
    pub asymptote: Option<AsymptoteReport>,
    pub ln_probe: LnLimitReport,
    pub boundary: BoundaryReport,
    pub trace: TraceSummary,
    pub witness: Option<WitnessReport>,
}

pub fn analyze(model: &Transformer<f64>, spec: &AnalysisSpec) -> Result<AnalysisReport> {
    let cfg = &model.config;
    let prompt = spec.context_prompt()?;
    let context = spec.context()?;
    let zeroed = without_positional(model);
    let mut notes = vec![
        "head abstracts, score check, asymptote, layer-norm probe and witness use the positional table switched off".into(),
        "boundary probe and layer trace use the model as configured".into(),
    ];
    let one_layer = cfg.layers == 1;
    let (heads, score_residual, asymptote) = if one_layer {
        let set = HeadSet::from_model(model, spec.tau)?;
        let mut tokens = context.clone();
        tokens.push(prompt.tokens[prompt.tokens.len() - 1]);
        (
            Some(set.heads),
            Some(score_extraction_residual(model, &tokens)?),
            Some(asymptote_estimate_with(model, &context, spec.tau)?),
        )
    } else {
        notes.push(format!("closed form, asymptote and witness skipped: {} layers", cfg.layers));
        (None, None, None)
    };
    let ln_probe = ln_limit_probe(&zeroed, &context, &spec.ln_grid)?;
    let f = |x: f64| query_output(model, &context, x);
    let boundary = boundary_probe(&f, &spec.boundary)?;
    let trace = TraceSummary {
        layers: layer_trace(model, &prompt)?,
        target: prompt.targets[prompt.len - 1],
        last_layer_dominance: last_layer_dominance(model, &spec.trace_set()?)?,
    };
    let witness = if one_layer && !cfg.use_ln && !cfg.use_mlp {
        Some(witness_check(model, &spec.witness)?)
    } else {
        if one_layer {
            notes.push("witness skipped: layer normalization or feedforward block present".into());
        }
        None
    };
    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        model: cfg.clone(),
        spec: spec.clone(),
        context,
        notes,
        heads,
        score_residual,
        asymptote,
        ln_probe,
        boundary,
        trace,
        witness,
    })
}

pub fn save_report(path: impl AsRef<Path>, report: &AnalysisReport) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text).map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<AnalysisReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(format!("reading {}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let version = value.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(Error::InvalidConfig(format!(
            "{} has schema version {version:?}, expected {SCHEMA_VERSION}",
            path.display()
        )));
    }
    Ok(serde_json::from_value(value)?)
}
