//! Forward pass, per-layer tracing and loss gradients.
//!
//! Every public entry point records the same graph on a [`GradTape`]:
//!
//! ```text
//! X0      = tokens * W + P                       (P: positional rows, optional)
//! A_l     = concat_h softmax_causal(X Q_h (X K_h)^T * scale) X V_h
//! M_l     = A_l * Gamma                          (Gamma stacks gamma_h by rows)
//! X_{l+1} = LN([X_l +] M_l)                      (LN and residual optional)
//!           then optionally LN([.+] relu(. W_in + b_in) W_out + b_out)
//! pred    = X_L * W_dec
//! ```

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerWeights};
use crate::numkit::{AttentionShape, GradTape, Matrix, NodeId};
use crate::scalar::Scalar;
use crate::tasks::PromptBatch;

/// A configured decoder together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T: Scalar> {
    pub config: ModelConfig,
    pub weights: TransformerWeights<T>,
}

/// Per-layer view of one forward pass, read at the query (last input) token.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar> {
    /// Decoder applied to each layer's output at the query token.
    pub layer_predictions: Vec<T>,
    /// `[layer][head]` attention row of the query token over its prefix.
    pub attention: Vec<Vec<Vec<T>>>,
    /// Full `tokens x d_model` output of every layer.
    pub hidden: Vec<Matrix<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar> {
    /// One prediction per loss position of the prompt, in order.
    pub predictions: Vec<T>,
    pub trace: Option<ForwardTrace<T>>,
}

struct LayerNodes {
    attention: NodeId,
    output: NodeId,
}

struct Graph {
    layers: Vec<LayerNodes>,
    predictions: NodeId,
}

impl<T: Scalar> Transformer<T> {
    pub fn new(config: ModelConfig, weights: TransformerWeights<T>) -> Result<Self> {
        config.validate()?;
        // from_tensors re-checks every shape against the config
        let weights = TransformerWeights::from_tensors(&config, weights.into_tensors())?;
        Ok(Self { config, weights })
    }

    pub fn init(config: ModelConfig, rng: &mut crate::tasks::Rng) -> Result<Self> {
        let weights = TransformerWeights::init(&config, rng)?;
        Ok(Self { config, weights })
    }

    fn record(&self, tape: &mut GradTape<T>, tokens: &[f64], seq_len: usize) -> Result<Graph> {
        let cfg = &self.config;
        if seq_len == 0 || !tokens.len().is_multiple_of(seq_len) {
            return Err(Error::shape("forward", format!("multiple of {seq_len} tokens"), tokens.len()));
        }
        if seq_len > cfg.max_seq_len {
            return Err(Error::SequenceTooLong { len: seq_len, max: cfg.max_seq_len });
        }
        let params: Vec<NodeId> = self
            .weights
            .tensors()
            .into_iter()
            .enumerate()
            .map(|(i, t)| tape.param(i, t.clone()))
            .collect();
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("declared order");

        let embedding = take();
        let positional = take();
        let column: Vec<T> = tokens.iter().map(|&v| T::of(v)).collect();
        let tok = tape.constant(Matrix::column_vector(&column));
        let mut x = tape.matmul(tok, embedding)?;
        if cfg.use_positional {
            x = tape.add_periodic(x, positional, seq_len)?;
        }

        let shape = AttentionShape {
            heads: cfg.heads,
            seq_len,
            scale: cfg.attention_scale(),
        };
        let eps = T::of(cfg.eps_ln);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let (wq, wk, wv, wo, g, s) = (take(), take(), take(), take(), take(), take());
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let attention = tape.causal_attention(q, k, v, shape)?;
            let mixed = tape.matmul(attention, wo)?;
            let mut h = if cfg.use_residual { tape.add(mixed, x)? } else { mixed };
            if cfg.use_ln {
                h = tape.layer_norm(h, g, s, eps)?;
            }
            if cfg.use_mlp {
                let (w_in, b_in, w_out, b_out, g2, s2) = (take(), take(), take(), take(), take(), take());
                let a = tape.matmul(h, w_in)?;
                let a = tape.add_row(a, b_in)?;
                let a = tape.relu(a);
                let f = tape.matmul(a, w_out)?;
                let f = tape.add_row(f, b_out)?;
                let mut h2 = if cfg.use_residual { tape.add(f, h)? } else { f };
                if cfg.use_ln {
                    h2 = tape.layer_norm(h2, g2, s2, eps)?;
                }
                h = h2;
            }
            x = h;
            layers.push(LayerNodes { attention, output: x });
        }
        let decoder = take();
        let predictions = tape.matmul(x, decoder)?;
        Ok(Graph { layers, predictions })
    }

    /// Predictions at the loss positions of `prompt`, optionally with a trace.
    pub fn forward(&self, prompt: &PromptBatch, want_trace: bool) -> Result<ForwardOutput<T>> {
        let seq_len = prompt.tokens.len();
        let mut tape = GradTape::new(self.weights.tensors().len());
        let graph = self.record(&mut tape, &prompt.tokens, seq_len)?;
        let pred = tape.value(graph.predictions);
        let predictions = prompt.loss_positions().into_iter().map(|p| pred.get(p, 0)).collect();
        let trace = if want_trace {
            Some(self.trace_from(&tape, &graph, prompt.query_position())?)
        } else {
            None
        };
        Ok(ForwardOutput { predictions, trace })
    }

    fn trace_from(&self, tape: &GradTape<T>, graph: &Graph, query: usize) -> Result<ForwardTrace<T>> {
        let cfg = &self.config;
        let mut layer_predictions = Vec::with_capacity(cfg.layers);
        let mut attention = Vec::with_capacity(cfg.layers);
        let mut hidden = Vec::with_capacity(cfg.layers);
        for (l, nodes) in graph.layers.iter().enumerate() {
            let out = tape.value(nodes.output);
            let decoded = if l + 1 == cfg.layers {
                tape.value(graph.predictions).get(query, 0)
            } else {
                out.row(query).iter().zip(self.weights.decoder.as_slice()).map(|(&a, &b)| a * b).sum()
            };
            layer_predictions.push(decoded);
            hidden.push(out.clone());
            let (probs, shape) = tape.attention_probs(nodes.attention).expect("attention node");
            let t = shape.seq_len;
            let heads = (0..shape.heads)
                .map(|h| probs[(h * t + query) * t..][..=query].to_vec())
                .collect();
            attention.push(heads);
        }
        Ok(ForwardTrace {
            layer_predictions,
            attention,
            hidden,
        })
    }

    /// Decoded output at every position of a raw token sequence.
    pub fn predict_tokens(&self, tokens: &[f64]) -> Result<Vec<T>> {
        let mut tape = GradTape::new(self.weights.tensors().len());
        let graph = self.record(&mut tape, tokens, tokens.len())?;
        Ok(tape.value(graph.predictions).as_slice().to_vec())
    }

    /// Predictions at the loss positions of every prompt. Prompts of equal
    /// token length are evaluated together.
    pub fn predict_batch(&self, prompts: &[PromptBatch]) -> Result<Vec<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = vec![None; prompts.len()];
        let mut order: Vec<usize> = (0..prompts.len()).collect();
        order.sort_by_key(|&i| prompts[i].tokens.len());
        for group in order.chunk_by(|&a, &b| prompts[a].tokens.len() == prompts[b].tokens.len()) {
            let seq_len = prompts[group[0]].tokens.len();
            let tokens: Vec<f64> = group.iter().flat_map(|&i| prompts[i].tokens.iter().copied()).collect();
            let mut tape = GradTape::new(self.weights.tensors().len());
            let graph = self.record(&mut tape, &tokens, seq_len)?;
            let pred = tape.value(graph.predictions);
            for (b, &i) in group.iter().enumerate() {
                let row = prompts[i].loss_positions().into_iter().map(|p| pred.get(b * seq_len + p, 0)).collect();
                out[i] = Some(row);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every prompt assigned")).collect())
    }

    /// Mean squared error over the loss positions of `prompts` (which must
    /// share one token length) and its exact gradient for every parameter.
    pub fn loss_and_gradients(&self, prompts: &[PromptBatch]) -> Result<(T, TransformerWeights<T>)> {
        let Some(first) = prompts.first() else {
            return Err(Error::InvalidConfig("empty batch".into()));
        };
        let seq_len = first.tokens.len();
        if let Some(p) = prompts.iter().find(|p| p.tokens.len() != seq_len) {
            return Err(Error::shape("loss_and_gradients", format!("{seq_len} tokens per prompt"), p.tokens.len()));
        }
        let mut tokens = Vec::with_capacity(seq_len * prompts.len());
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (b, p) in prompts.iter().enumerate() {
            if p.loss_mask.len() != p.tokens.len() {
                return Err(Error::shape("loss_and_gradients", "mask per token", p.loss_mask.len()));
            }
            tokens.extend_from_slice(&p.tokens);
            for (i, pos) in p.loss_positions().into_iter().enumerate() {
                rows.push(b * seq_len + pos);
                targets.push(T::of(p.targets[i]));
            }
        }
        let n_params = self.weights.tensors().len();
        let mut tape = GradTape::new(n_params);
        let graph = self.record(&mut tape, &tokens, seq_len)?;
        let selected = tape.gather_rows(graph.predictions, rows)?;
        let loss = tape.mean_squared_error(selected, targets)?;
        let grads = tape.backward(loss)?;
        let tensors = self
            .weights
            .tensors()
            .into_iter()
            .zip(grads)
            .map(|(w, g)| g.unwrap_or_else(|| Matrix::zeros(w.rows(), w.cols())))
            .collect();
        let grads = TransformerWeights::from_tensors(&self.config, tensors)?;
        Ok((tape.value(loss).get(0, 0), grads))
    }

    /// Token matrix `row_i = scalars_i * W + positional_i`.
    pub fn embed_sequence(&self, scalars: &[f64]) -> Result<Matrix<T>> {
        let mut tape = GradTape::new(0);
        if scalars.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong { len: scalars.len(), max: self.config.max_seq_len });
        }
        let column: Vec<T> = scalars.iter().map(|&v| T::of(v)).collect();
        let tok = tape.constant(Matrix::column_vector(&column));
        let w = tape.constant(self.weights.embedding.clone());
        let mut x = tape.matmul(tok, w)?;
        if self.config.use_positional {
            let p = tape.constant(self.weights.positional.clone());
            x = tape.add_periodic(x, p, scalars.len())?;
        }
        Ok(tape.value(x).clone())
    }

    /// Multi-head attention of `layer` applied to a token matrix:
    /// `sum_h head_h(X) gamma_h`.
    pub fn multi_head(&self, x: &Matrix<T>, layer: usize) -> Result<Matrix<T>> {
        let lw = &self.weights.layers[layer];
        let mut tape = GradTape::new(0);
        let xn = tape.constant(x.clone());
        let (wq, wk, wv, wo) = (
            tape.constant(lw.query.clone()),
            tape.constant(lw.key.clone()),
            tape.constant(lw.value.clone()),
            tape.constant(lw.output.clone()),
        );
        let q = tape.matmul(xn, wq)?;
        let k = tape.matmul(xn, wk)?;
        let v = tape.matmul(xn, wv)?;
        let shape = AttentionShape {
            heads: self.config.heads,
            seq_len: x.rows(),
            scale: self.config.attention_scale(),
        };
        let a = tape.causal_attention(q, k, v, shape)?;
        let m = tape.matmul(a, wo)?;
        Ok(tape.value(m).clone())
    }
}

/// One attention head over a token matrix:
/// `out_i = sum_{j<=i} softmax_j(scale * x_i Q K^T x_j^T) x_j V`.
pub fn attention_head<T: Scalar>(x: &Matrix<T>, query: &Matrix<T>, key: &Matrix<T>, value: &Matrix<T>, scale: f64) -> Result<Matrix<T>> {
    if query.shape() != key.shape() || query.shape() != value.shape() || query.rows() != x.cols() {
        return Err(Error::shape(
            "attention_head",
            format!("{}xk projections", x.cols()),
            format!("{:?}/{:?}/{:?}", query.shape(), key.shape(), value.shape()),
        ));
    }
    let mut tape = GradTape::new(0);
    let xn = tape.constant(x.clone());
    let (wq, wk, wv) = (tape.constant(query.clone()), tape.constant(key.clone()), tape.constant(value.clone()));
    let q = tape.matmul(xn, wq)?;
    let k = tape.matmul(xn, wk)?;
    let v = tape.matmul(xn, wv)?;
    let a = tape.causal_attention(q, k, v, AttentionShape { heads: 1, seq_len: x.rows(), scale })?;
    Ok(tape.value(a).clone())
}
