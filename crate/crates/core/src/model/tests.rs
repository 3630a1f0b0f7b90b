use rand::Rng as _;

use super::*;
use crate::numkit::Matrix;
use crate::tasks::{build_prompt, stream, FunctionSpec, PromptBatch, Regime, Rng};

fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn randomized(cfg: ModelConfig, scale: f64, seed: u64) -> Transformer<f64> {
    let mut rng = stream(seed, "model-test", 0);
    let tensors = tensor_shapes(&cfg)
        .iter()
        .map(|&(_, r, c)| random_matrix(r, c, scale, &mut rng))
        .collect();
    Transformer::new(cfg.clone(), TransformerWeights::from_tensors(&cfg, tensors).unwrap()).unwrap()
}

fn linear_prompt(xs: &[f64]) -> PromptBatch {
    let f = FunctionSpec::new(vec![0.5, -1.5], Regime::Standard).unwrap();
    build_prompt(&f, xs, false).unwrap()
}

/// Direct evaluation of one causal attention head, term by term.
fn brute_force_head(x: &Matrix<f64>, q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>, scale: f64) -> Matrix<f64> {
    let n = x.rows();
    let qk = q.matmul(&k.transpose()).unwrap();
    let xv = x.matmul(v).unwrap();
    let mut out = Matrix::zeros(n, v.cols());
    for i in 0..n {
        let scores: Vec<f64> = (0..=i)
            .map(|j| {
                let mut s = 0.0;
                for a in 0..x.cols() {
                    for b in 0..x.cols() {
                        s += x.get(i, a) * qk.get(a, b) * x.get(j, b);
                    }
                }
                scale * s
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for (j, s) in scores.iter().enumerate() {
            let w = s.exp() / z;
            for c in 0..v.cols() {
                out.set(i, c, out.get(i, c) + w * xv.get(j, c));
            }
        }
    }
    out
}

#[test]
fn embedding_zero_input_is_positional_row() {
    let m = randomized(ModelConfig { layers: 1, heads: 1, d_model: 4, max_seq_len: 6, ..Default::default() }, 1.0, 1);
    let e = m.embed_sequence(&[0.0, 3.0]).unwrap();
    assert_eq!(e.row(0), m.weights.positional.row(0));
}

#[test]
fn embedding_is_linear_in_scalars() {
    let mut m = randomized(ModelConfig { layers: 1, heads: 1, d_model: 4, max_seq_len: 6, ..Default::default() }, 1.0, 2);
    m.weights.positional.fill(0.0);
    let e = m.embed_sequence(&[1.0, 2.0]).unwrap();
    let w = m.weights.embedding.as_slice();
    assert_eq!(e.row(0), w);
    for (a, b) in e.row(1).iter().zip(w) {
        assert_eq!(*a, 2.0 * b);
    }

    let m = randomized(ModelConfig { layers: 1, heads: 1, d_model: 4, max_seq_len: 6, ..Default::default() }, 1.0, 3);
    let xs = [0.3, -1.1, 2.0];
    let scaled: Vec<f64> = xs.iter().map(|x| 7.0 * x).collect();
    let base = m.embed_sequence(&xs).unwrap();
    let big = m.embed_sequence(&scaled).unwrap();
    for i in 0..3 {
        for j in 0..4 {
            let p = m.weights.positional.get(i, j);
            assert!(((big.get(i, j) - p) - 7.0 * (base.get(i, j) - p)).abs() < 1e-12);
        }
    }
}

#[test]
fn embedding_rejects_overlong_sequence() {
    let m = randomized(ModelConfig { layers: 1, heads: 1, d_model: 2, max_seq_len: 3, ..Default::default() }, 1.0, 4);
    assert!(matches!(m.embed_sequence(&[0.0; 4]), Err(crate::error::Error::SequenceTooLong { .. })));
    let p = linear_prompt(&[0.1, 0.2, 0.3]);
    assert!(m.forward(&p, false).is_err());
}

#[test]
fn single_token_head_returns_its_value() {
    let mut rng = stream(5, "head", 0);
    let x = random_matrix(1, 3, 1.0, &mut rng);
    let (q, k, v) = (random_matrix(3, 2, 1.0, &mut rng), random_matrix(3, 2, 1.0, &mut rng), random_matrix(3, 2, 1.0, &mut rng));
    let out = attention_head(&x, &q, &k, &v, 1.0).unwrap();
    let xv = x.matmul(&v).unwrap();
    for (a, b) in out.as_slice().iter().zip(xv.as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn zero_scores_average_the_prefix() {
    let mut rng = stream(6, "head", 0);
    let x = random_matrix(4, 3, 1.0, &mut rng);
    let q = Matrix::zeros(3, 2);
    let (k, v) = (random_matrix(3, 2, 1.0, &mut rng), random_matrix(3, 2, 1.0, &mut rng));
    let out = attention_head(&x, &q, &k, &v, 1.0).unwrap();
    let xv = x.matmul(&v).unwrap();
    for i in 0..4 {
        for c in 0..2 {
            let mean = (0..=i).map(|j| xv.get(j, c)).sum::<f64>() / (i + 1) as f64;
            assert!((out.get(i, c) - mean).abs() < 1e-14);
        }
    }
}

#[test]
fn head_matches_brute_force() {
    let mut rng = stream(7, "head", 0);
    for _ in 0..20 {
        let x = random_matrix(3, 2, 1.5, &mut rng);
        let (q, k, v) = (random_matrix(2, 2, 1.5, &mut rng), random_matrix(2, 2, 1.5, &mut rng), random_matrix(2, 2, 1.5, &mut rng));
        for scale in [1.0, 0.5f64.sqrt()] {
            let out = attention_head(&x, &q, &k, &v, scale).unwrap();
            let oracle = brute_force_head(&x, &q, &k, &v, scale);
            for (a, b) in out.as_slice().iter().zip(oracle.as_slice()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn multi_head_superposition() {
    let mut rng = stream(8, "mh", 0);
    let x = random_matrix(5, 2, 1.0, &mut rng);
    // H = 1 with identity projection equals the bare head
    let cfg1 = ModelConfig { layers: 1, heads: 1, d_model: 2, max_seq_len: 5, softmax_scale: false, ..Default::default() };
    let mut m1 = randomized(cfg1, 1.0, 9);
    m1.weights.layers[0].output = Matrix::identity(2);
    let lw = m1.weights.layers[0].clone();
    let single = m1.multi_head(&x, 0).unwrap();
    let head = attention_head(&x, &lw.query, &lw.key, &lw.value, 1.0).unwrap();
    for (a, b) in single.as_slice().iter().zip(head.as_slice()) {
        assert!((a - b).abs() < 1e-14);
    }

    // two identical heads with each gamma halved reproduce a single head
    let cfg = ModelConfig { layers: 1, heads: 1, d_model: 4, max_seq_len: 5, softmax_scale: false, ..Default::default() };
    let one = randomized(cfg.clone(), 1.0, 10);
    let xw = random_matrix(5, 4, 1.0, &mut rng);

    let cfg2 = ModelConfig { heads: 2, d_model: 4, ..cfg.clone() };
    let mut two = randomized(cfg2, 1.0, 11);
    // head width 2: duplicate a 2-wide head into both slots
    let small_q = one.weights.layers[0].query.column_block(0, 2);
    let small_k = one.weights.layers[0].key.column_block(0, 2);
    let small_v = one.weights.layers[0].value.column_block(0, 2);
    let gamma = random_matrix(2, 4, 1.0, &mut rng);
    let l = &mut two.weights.layers[0];
    l.query = Matrix::from_fn(4, 4, |i, j| small_q.get(i, j % 2));
    l.key = Matrix::from_fn(4, 4, |i, j| small_k.get(i, j % 2));
    l.value = Matrix::from_fn(4, 4, |i, j| small_v.get(i, j % 2));
    l.output = Matrix::from_fn(4, 4, |i, j| 0.5 * gamma.get(i % 2, j));
    let dup = two.multi_head(&xw, 0).unwrap();
    let head = attention_head(&xw, &small_q, &small_k, &small_v, 1.0).unwrap();
    let reference = head.matmul(&gamma).unwrap();
    for (a, b) in dup.as_slice().iter().zip(reference.as_slice()) {
        assert!((a - b).abs() < 1e-13);
    }

    // zero values give zero output
    let mut z = randomized(cfg, 1.0, 12);
    z.weights.layers[0].value.fill(0.0);
    assert!(z.multi_head(&xw, 0).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn zero_weights_without_ln_predict_zero() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, use_ln: false, ..Default::default() };
    let m = Transformer::new(cfg.clone(), TransformerWeights::<f64>::zeros(&cfg).unwrap()).unwrap();
    let out = m.forward(&linear_prompt(&[0.3, -0.2, 0.9]), false).unwrap();
    assert_eq!(out.predictions, vec![0.0; 3]);
}

#[test]
fn causal_invariance_to_later_tokens() {
    for use_mlp in [false, true] {
        let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, use_mlp, mlp_hidden: 5, ..Default::default() };
        let m = randomized(cfg, 0.8, 13);
        let p = linear_prompt(&[0.3, -0.2, 0.9, 0.4, -0.7]);
        let base = m.forward(&p, false).unwrap().predictions;
        for cut in 0..p.tokens.len() {
            let mut q = p.clone();
            for t in &mut q.tokens[cut + 1..] {
                *t += 3.7;
            }
            let out = m.forward(&q, false).unwrap().predictions;
            for (i, pos) in p.loss_positions().into_iter().enumerate() {
                if pos <= cut {
                    assert_eq!(out[i].to_bits(), base[i].to_bits(), "position {pos} changed after perturbing > {cut}");
                }
            }
        }
    }
}

#[test]
fn trace_is_consistent_with_forward() {
    let cfg = ModelConfig { layers: 3, heads: 2, d_model: 4, max_seq_len: 9, ..Default::default() };
    let m = randomized(cfg, 0.8, 14);
    let p = linear_prompt(&[0.3, -0.2, 0.9, 0.4]);
    let out = m.forward(&p, true).unwrap();
    let trace = out.trace.unwrap();
    assert_eq!(trace.layer_predictions.len(), 3);
    assert_eq!(trace.layer_predictions[2], *out.predictions.last().unwrap());
    for layer in &trace.attention {
        assert_eq!(layer.len(), 2);
        for row in layer {
            assert_eq!(row.len(), p.query_position() + 1);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&w| w >= 0.0));
        }
    }
}

#[test]
fn post_norm_activations_are_standardized() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 6, max_seq_len: 9, eps_ln: 1e-12, ..Default::default() };
    let m = randomized(cfg, 0.8, 15);
    let p = linear_prompt(&[0.3, -0.2, 0.9, 0.4]);
    let trace = m.forward(&p, true).unwrap().trace.unwrap();
    for (l, h) in trace.hidden.iter().enumerate() {
        let gain = m.weights.layers[l].ln_gain.as_slice();
        let shift = m.weights.layers[l].ln_shift.as_slice();
        for r in 0..h.rows() {
            let z: Vec<f64> = h.row(r).iter().zip(gain).zip(shift).map(|((&y, &g), &s)| (y - s) / g).collect();
            let mean = z.iter().sum::<f64>() / 6.0;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }
}

#[test]
fn batched_prediction_matches_single() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, ..Default::default() };
    let m = randomized(cfg, 0.8, 16);
    let prompts = vec![linear_prompt(&[0.1, 0.2]), linear_prompt(&[0.5, -0.3, 0.8]), linear_prompt(&[-0.9, 0.4])];
    let batched = m.predict_batch(&prompts).unwrap();
    for (p, b) in prompts.iter().zip(&batched) {
        let single = m.forward(p, false).unwrap().predictions;
        for (x, y) in single.iter().zip(b) {
            assert!((x - y).abs() < 1e-13);
        }
    }
}

#[test]
fn token_predictions_cover_every_position() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, ..Default::default() };
    let m = randomized(cfg, 0.8, 17);
    let p = linear_prompt(&[0.5, -0.3, 0.8]);
    let all = m.predict_tokens(&p.tokens).unwrap();
    assert_eq!(all.len(), p.tokens.len());
    let at_inputs: Vec<f64> = p.loss_positions().into_iter().map(|i| all[i]).collect();
    assert_eq!(at_inputs, m.forward(&p, false).unwrap().predictions);
}

/// Loss recomputed from forward predictions only.
fn forward_loss(m: &Transformer<f64>, prompts: &[PromptBatch]) -> f64 {
    let preds = m.predict_batch(prompts).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for (p, pr) in prompts.iter().zip(&preds) {
        for (y, yh) in p.targets.iter().zip(pr) {
            total += (yh - y).powi(2);
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn gradients_match_central_differences() {
    let cfg = ModelConfig { layers: 1, heads: 1, d_model: 4, max_seq_len: 5, ..Default::default() };
    let m = randomized(cfg.clone(), 0.7, 17);
    let prompts = vec![linear_prompt(&[0.3, -0.6, 0.8]), linear_prompt(&[-0.1, 0.9, 0.2])];
    let (loss, grads) = m.loss_and_gradients(&prompts).unwrap();
    assert!((loss - forward_loss(&m, &prompts)).abs() < 1e-14);
    let h = 1e-5;
    let n = m.weights.tensors().len();
    for ti in 0..n {
        for e in 0..m.weights.tensors()[ti].len() {
            let mut plus = m.clone();
            plus.weights.tensors_mut()[ti].as_mut_slice()[e] += h;
            let mut minus = m.clone();
            minus.weights.tensors_mut()[ti].as_mut_slice()[e] -= h;
            let fd = (forward_loss(&plus, &prompts) - forward_loss(&minus, &prompts)) / (2.0 * h);
            let an = grads.tensors()[ti].as_slice()[e];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-4, "tensor {ti} entry {e}: fd {fd} analytic {an}");
        }
    }
}

#[test]
fn perfect_predictor_has_zero_loss_and_gradient() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 7, use_ln: false, ..Default::default() };
    let m = Transformer::new(cfg.clone(), TransformerWeights::<f64>::zeros(&cfg).unwrap()).unwrap();
    let zero = FunctionSpec::new(vec![0.0, 0.0], Regime::Standard).unwrap();
    let p = build_prompt(&zero, &[0.4, -0.3, 0.2], false).unwrap();
    let (loss, grads) = m.loss_and_gradients(&[p]).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.tensors().iter().all(|g| g.max_abs() < 1e-12));
}

#[test]
fn decoder_gradient_is_twice_residual_times_activation() {
    let cfg = ModelConfig { layers: 1, heads: 2, d_model: 4, max_seq_len: 3, ..Default::default() };
    let m = randomized(cfg, 0.9, 18);
    let p = linear_prompt(&[0.7]);
    let out = m.forward(&p, true).unwrap();
    let pred = out.predictions[0];
    let activation = out.trace.unwrap().hidden[0].row(0).to_vec();
    let (_, grads) = m.loss_and_gradients(std::slice::from_ref(&p)).unwrap();
    for (g, a) in grads.decoder.as_slice().iter().zip(&activation) {
        let expected = 2.0 * (pred - p.targets[0]) * a;
        assert!((g - expected).abs() < 1e-14);
    }
}

#[test]
fn mixed_lengths_rejected_for_gradients() {
    let cfg = ModelConfig { layers: 1, heads: 1, d_model: 2, max_seq_len: 7, ..Default::default() };
    let m = randomized(cfg, 0.5, 19);
    let prompts = vec![linear_prompt(&[0.1]), linear_prompt(&[0.1, 0.2])];
    assert!(m.loss_and_gradients(&prompts).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_forward_bits() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, ..Default::default() };
    let m = randomized(cfg, 0.8, 20);
    let ck = Checkpoint { model: m.clone(), seed: 1, step: 2 };
    let mut buf = Vec::new();
    ck.write_to(&mut buf).unwrap();
    let back = Checkpoint::<f64>::read_from(&mut buf.as_slice()).unwrap();
    let p = linear_prompt(&[0.3, -0.2, 0.9, 0.4]);
    let a = m.forward(&p, false).unwrap().predictions;
    let b = back.model.forward(&p, false).unwrap().predictions;
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn f32_model_tracks_f64_model() {
    let cfg = ModelConfig { layers: 2, heads: 2, d_model: 4, max_seq_len: 9, ..Default::default() };
    let m = randomized(cfg.clone(), 0.8, 21);
    let m32 = Transformer::<f32> { config: cfg.clone(), weights: m.weights.cast(&cfg) };
    let p = linear_prompt(&[0.3, -0.2, 0.9, 0.4]);
    let a = m.forward(&p, false).unwrap().predictions;
    let b = m32.forward(&p, false).unwrap().predictions;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}
