//! Numerical oracles shared by the `selftest` command and the acceptance
//! suite: central-difference gradients, closed-form attention and a
//! single-loop recomputation of `eps_sigma`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::analysis::{closed_form_attention, model_attention};
use crate::error::Result;
use crate::evaluator::{test_set, Episode, Predictor, TestSpec};
use crate::model::{tensor_shapes, ModelConfig, Transformer, TransformerWeights};
use crate::numkit::Matrix;
use crate::tasks::{build_prompt, sample_function, stream, DistributionSpec, PromptBatch, Regime, Rng};

/// A model whose every entry is drawn from `U(-scale, scale)`.
pub fn random_model(cfg: ModelConfig, scale: f64, rng: &mut Rng) -> Result<Transformer<f64>> {
    let tensors = tensor_shapes(&cfg)
        .iter()
        .map(|&(_, r, c)| Matrix::from_fn(r, c, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0)))
        .collect();
    let weights = TransformerWeights::from_tensors(&cfg, tensors)?;
    Transformer::new(cfg, weights)
}

/// A small configuration with at most two layers and width at most 8; every
/// architectural toggle is drawn at random.
pub fn random_small_config(rng: &mut Rng) -> ModelConfig {
    let heads = [1, 2][rng.random_range(0..2)];
    let d_model = heads * rng.random_range(1..=8 / heads);
    let use_ln = d_model >= 2 && rng.random_bool(0.5);
    ModelConfig {
        layers: rng.random_range(1..=2),
        heads,
        d_model,
        max_seq_len: 8,
        use_ln,
        use_residual: rng.random_bool(0.5),
        use_mlp: rng.random_bool(0.3),
        mlp_hidden: 6,
        softmax_scale: rng.random_bool(0.5),
        use_positional: rng.random_bool(0.5),
        ..ModelConfig::default()
    }
}

/// Largest relative gap between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub entries: usize,
    /// Entries skipped because the one-sided differences disagree, which
    /// marks a ReLU kink inside the step.
    pub kinks: usize,
}

fn mean_loss(m: &Transformer<f64>, prompts: &[PromptBatch]) -> Result<f64> {
    let preds = m.predict_batch(prompts)?;
    let mut total = 0.0;
    let mut count = 0;
    for (p, pr) in prompts.iter().zip(&preds) {
        for (y, yh) in p.targets.iter().zip(pr) {
            total += (yh - y).powi(2);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Magnitude below which gradient entries are compared in absolute terms.
/// Central differences with `h = 1e-5` carry rounding noise near
/// `1e-16 * L / h`, about `1e-11` here.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compares every analytic gradient entry with `(L(w+h) - L(w-h)) / 2h`,
/// using `|fd - an| / max(|fd|, |an|, GRADIENT_FLOOR)`.
pub fn gradient_check(model: &Transformer<f64>, prompts: &[PromptBatch], h: f64) -> Result<GradientCheck> {
    let (_, grads) = model.loss_and_gradients(prompts)?;
    let base = mean_loss(model, prompts)?;
    let mut out = GradientCheck { max_rel_error: 0.0, entries: 0, kinks: 0 };
    let mut probe = model.clone();
    for (ti, g) in grads.tensors().into_iter().enumerate() {
        for e in 0..g.len() {
            let w = probe.weights.tensors()[ti].as_slice()[e];
            probe.weights.tensors_mut()[ti].as_mut_slice()[e] = w + h;
            let up = mean_loss(&probe, prompts)?;
            probe.weights.tensors_mut()[ti].as_mut_slice()[e] = w - h;
            let down = mean_loss(&probe, prompts)?;
            probe.weights.tensors_mut()[ti].as_mut_slice()[e] = w;
            let fwd = (up - base) / h;
            let bwd = (base - down) / h;
            if model.config.use_mlp && (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-6) {
                out.kinks += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * h);
            let an = g.as_slice()[e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(GRADIENT_FLOOR);
            out.max_rel_error = out.max_rel_error.max(rel);
            out.entries += 1;
        }
    }
    Ok(out)
}

/// Gradient check on `cases` random small configurations.
pub fn gradient_suite(cases: usize, seed: u64) -> Result<Vec<(ModelConfig, GradientCheck)>> {
    let mut rng = stream(seed, "gradient-suite", 0);
    let coefficients = DistributionSpec::uniform(1.0);
    (0..cases)
        .map(|_| {
            let cfg = random_small_config(&mut rng);
            let model = random_model(cfg.clone(), 0.5, &mut rng)?;
            let prompts = (0..2)
                .map(|_| {
                    let f = sample_function(Regime::Standard, &[1], &coefficients, &[], &mut rng)?;
                    let xs = coefficients.sample_n(3, &mut rng);
                    build_prompt(&f, &xs, false)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((cfg, gradient_check(&model, &prompts, 1e-5)?))
        })
        .collect()
}

/// Worst relative gap between the closed-form and the computed attention
/// output over `cases` random one-layer prompts.
pub fn closed_form_suite(cases: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed, "closed-form-suite", 0);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let heads = [1, 2, 4][case % 3];
        let cfg = ModelConfig {
            layers: 1,
            heads,
            d_model: heads * rng.random_range(1..=3),
            max_seq_len: 16,
            use_ln: false,
            use_residual: false,
            use_mlp: false,
            softmax_scale: rng.random_bool(0.5),
            use_positional: false,
            ..ModelConfig::default()
        };
        let model = random_model(cfg, 1.0, &mut rng)?;
        let p = rng.random_range(0..12);
        let context: Vec<f64> = (0..p).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
        let x = 6.0 * rng.random::<f64>() - 3.0;
        let cf = closed_form_attention(&model, &context, x)?;
        let fw = model_attention(&model, &context, x)?;
        let gap: f64 = cf.iter().zip(&fw).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let size: f64 = fw.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(if gap == 0.0 { 0.0 } else { gap / size });
    }
    Ok(worst)
}

/// `eps_sigma` recomputed one prefix and one term at a time.
pub fn single_loop_epsilon(predictor: &dyn Predictor, spec: &TestSpec) -> Result<f64> {
    let set = test_set(spec)?;
    let mut total = 0.0;
    for tf in &set {
        let mut function_sum = 0.0;
        for ep in &tf.episodes {
            let mut batch_sum = 0.0;
            for k in (spec.degree + 2)..=spec.n_points {
                let prefix = Episode { xs: ep.xs[..k].to_vec(), ys: ep.ys[..k].to_vec() };
                let pred = predictor.predict(&tf.function, &[prefix])?[0][k - 1];
                batch_sum += (pred - ep.ys[k - 1]).powi(2);
            }
            function_sum += batch_sum / spec.n_points as f64 / spec.n_batches as f64;
        }
        total += function_sum;
    }
    Ok(total / spec.n_functions as f64)
}

/// One named pass/fail line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckOutcome {
    pub fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, passed: value < threshold }
    }
}

/// Quick versions of the oracles above.
pub fn selftest(seed: u64) -> Result<Vec<CheckOutcome>> {
    let grad = gradient_suite(5, seed)?
        .iter()
        .map(|(_, g)| g.max_rel_error)
        .fold(0.0, f64::max);
    let closed = closed_form_suite(20, seed)?;
    let mut rng = stream(seed, "selftest-model", 0);
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 8, max_seq_len: 20, ..ModelConfig::default() };
    let model = random_model(cfg, 0.3, &mut rng)?;
    let spec = TestSpec { n_functions: 5, n_batches: 2, n_points: 10, seed, ..TestSpec::default() };
    let fast = crate::evaluator::epsilon_sigma(&model, &spec)?.eps;
    let slow = single_loop_epsilon(&model, &spec)?;
    Ok(vec![
        CheckOutcome::below("gradient vs central differences (max rel)", grad, 1e-4),
        CheckOutcome::below("closed-form attention vs forward (max rel)", closed, 1e-9),
        CheckOutcome::below("eps_sigma vs single-loop recomputation (rel)", (fast - slow).abs() / slow.abs().max(1e-300), 1e-12),
    ])
}
