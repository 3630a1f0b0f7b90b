use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Transformer;

/// Sign class of a head's score coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadClass {
    #[serde(rename = "H+")]
    Positive,
    #[serde(rename = "H-")]
    Negative,
    #[serde(rename = "H0")]
    Zero,
}

impl HeadClass {
    pub fn of(alpha: f64, tau: f64) -> Self {
        if alpha > tau {
            HeadClass::Positive
        } else if alpha < -tau {
            HeadClass::Negative
        } else {
            HeadClass::Zero
        }
    }
}

/// One head of a one-layer model reduced to scalars: the score between
/// tokens `u` and `v` is `scale * u * alpha * v` and a token `v` contributes
/// `v * zeta` to the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadAbstract {
    pub head: usize,
    /// `W Q_h K_h^T W^T`.
    pub alpha: f64,
    /// `W V_h gamma_h`.
    pub zeta: Vec<f64>,
    pub class: HeadClass,
}

/// Default band around zero inside which a head counts as `H0`.
pub const DEFAULT_TAU: f64 = 1e-10;

/// All heads of a one-layer model with the pieces needed to decode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSet {
    pub heads: Vec<HeadAbstract>,
    /// Multiplier applied to every score before the softmax.
    pub scale: f64,
    pub tau: f64,
    /// Embedding row `W`.
    pub embedding: Vec<f64>,
    pub decoder: Vec<f64>,
}

impl HeadSet {
    pub fn from_model(model: &Transformer<f64>, tau: f64) -> Result<Self> {
        let cfg = &model.config;
        if cfg.layers != 1 {
            return Err(Error::InvalidConfig(format!(
                "the closed form covers one layer, model has {}",
                cfg.layers
            )));
        }
        let w = &model.weights.embedding;
        let dh = cfg.d_head();
        let heads = (0..cfg.heads)
            .map(|h| {
                let q = w.matmul(&model.weights.query_head(0, h, dh))?;
                let k = w.matmul(&model.weights.key_head(0, h, dh))?;
                let zeta = w
                    .matmul(&model.weights.value_head(0, h, dh))?
                    .matmul(&model.weights.head_projection(0, h, dh))?
                    .into_vec();
                let alpha = super::dot(q.as_slice(), k.as_slice());
                if !alpha.is_finite() {
                    return Err(Error::NonFinite(format!("alpha of head {h}")));
                }
                Ok(HeadAbstract { head: h, alpha, zeta, class: HeadClass::of(alpha, tau) })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            scale: cfg.attention_scale(),
            tau,
            embedding: w.as_slice().to_vec(),
            decoder: model.weights.decoder.as_slice().to_vec(),
        })
    }

    pub fn d_model(&self) -> usize {
        self.embedding.len()
    }

    /// `sum_h (sum_j mu_j^h(x) + beta^h(x)) zeta_h` for context tokens
    /// `c_1..c_p` and query `x`.
    pub fn attention(&self, context: &[f64], x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d_model()];
        let tokens: Vec<f64> = context.iter().copied().chain([x]).collect();
        for h in &self.heads {
            let a = self.scale * h.alpha * x;
            let scores: Vec<f64> = tokens.iter().map(|&c| a * c).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = weights.iter().sum();
            let mixed: f64 = weights.iter().zip(&tokens).map(|(w, c)| w * c).sum::<f64>() / z;
            super::axpy(&mut out, mixed, &h.zeta);
        }
        out
    }

    /// `sum_h zeta_h`.
    pub fn zeta_sum(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d_model()];
        for h in &self.heads {
            super::axpy(&mut out, 1.0, &h.zeta);
        }
        out
    }

    /// `sum_h ||zeta_h||`, the natural magnitude of an attention slope.
    pub fn zeta_scale(&self) -> f64 {
        self.heads.iter().map(|h| super::norm(&h.zeta)).sum()
    }
}

/// Attention output of a one-layer model at query `x` after `context`,
/// evaluated from the per-head scalars.
pub fn closed_form_attention(model: &Transformer<f64>, context: &[f64], x: f64) -> Result<Vec<f64>> {
    Ok(HeadSet::from_model(model, DEFAULT_TAU)?.attention(context, x))
}

/// Attention output of the model's own layer 0 at the last token of
/// `context ++ [x]`, embedded without positions.
pub fn model_attention(model: &Transformer<f64>, context: &[f64], x: f64) -> Result<Vec<f64>> {
    let m = super::without_positional(model);
    let tokens: Vec<f64> = context.iter().copied().chain([x]).collect();
    let e = m.embed_sequence(&tokens)?;
    let a = m.multi_head(&e, 0)?;
    Ok(a.row(tokens.len() - 1).to_vec())
}

/// Largest relative gap between the model's pre-softmax layer-0 scores and
/// `scale * c_i * alpha_h * c_j`, over all heads and causal pairs.
pub fn score_extraction_residual(model: &Transformer<f64>, tokens: &[f64]) -> Result<f64> {
    let set = HeadSet::from_model(model, DEFAULT_TAU)?;
    let m = super::without_positional(model);
    let e = m.embed_sequence(tokens)?;
    let dh = m.config.d_head();
    let mut worst: f64 = 0.0;
    for h in &set.heads {
        let q = e.matmul(&m.weights.query_head(0, h.head, dh))?;
        let k = e.matmul(&m.weights.key_head(0, h.head, dh))?;
        for i in 0..tokens.len() {
            for j in 0..=i {
                let s = set.scale * super::dot(q.row(i), k.row(j));
                let rebuilt = set.scale * tokens[i] * h.alpha * tokens[j];
                worst = worst.max((s - rebuilt).abs() / s.abs().max(1.0));
            }
        }
    }
    Ok(worst)
}
