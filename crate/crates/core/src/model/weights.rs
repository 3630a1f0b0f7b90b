use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numkit::Matrix;
use crate::scalar::Scalar;
use crate::tasks::Rng;

/// Feedforward block `relu(x W_in + b_in) W_out + b_out` with its own Add & Norm.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights<T: Scalar> {
    pub w_in: Matrix<T>,
    pub b_in: Matrix<T>,
    pub w_out: Matrix<T>,
    pub b_out: Matrix<T>,
    pub ln_gain: Matrix<T>,
    pub ln_shift: Matrix<T>,
}

/// One decoder layer.
///
/// Head `h` owns column block `[h*d_head, (h+1)*d_head)` of `query`, `key`
/// and `value`, and row block `[h*d_head, (h+1)*d_head)` of `output`, which
/// is its projection `gamma_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T: Scalar> {
    pub query: Matrix<T>,
    pub key: Matrix<T>,
    pub value: Matrix<T>,
    pub output: Matrix<T>,
    pub ln_gain: Matrix<T>,
    pub ln_shift: Matrix<T>,
    pub mlp: Option<MlpWeights<T>>,
}

/// Every learned parameter of the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights<T: Scalar> {
    /// `1 x d_model`; token `x` embeds to `x * embedding`.
    pub embedding: Matrix<T>,
    /// `max_seq_len x d_model`.
    pub positional: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    /// `d_model x 1`.
    pub decoder: Matrix<T>,
}

fn gaussian<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        T::of(std * z)
    })
}

impl<T: Scalar> TransformerWeights<T> {
    /// Gaussian initialization; layer-norm gains 1, shifts and biases 0.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let s = cfg.init_std;
        let embedding = gaussian(1, d, s, rng);
        let positional = gaussian(cfg.max_seq_len, d, s, rng);
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let query = gaussian(d, d, s, rng);
            let key = gaussian(d, d, s, rng);
            let value = gaussian(d, d, s, rng);
            let output = gaussian(d, d, s, rng);
            let mlp = cfg.use_mlp.then(|| MlpWeights {
                w_in: gaussian(d, cfg.mlp_hidden, s, rng),
                b_in: Matrix::zeros(1, cfg.mlp_hidden),
                w_out: gaussian(cfg.mlp_hidden, d, s, rng),
                b_out: Matrix::zeros(1, d),
                ln_gain: Matrix::filled(1, d, T::one()),
                ln_shift: Matrix::zeros(1, d),
            });
            layers.push(LayerWeights {
                query,
                key,
                value,
                output,
                ln_gain: Matrix::filled(1, d, T::one()),
                ln_shift: Matrix::zeros(1, d),
                mlp,
            });
        }
        let decoder = gaussian(d, 1, s, rng);
        Ok(Self {
            embedding,
            positional,
            layers,
            decoder,
        })
    }

    /// All-zero weights of the right shapes (layer-norm gains included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let shapes = tensor_shapes(cfg);
        Self::from_tensors(cfg, shapes.iter().map(|&(_, r, c)| Matrix::zeros(r, c)).collect())
    }

    /// Parameters in declared order.
    pub fn tensors(&self) -> Vec<&Matrix<T>> {
        let mut out = vec![&self.embedding, &self.positional];
        for l in &self.layers {
            out.extend([&l.query, &l.key, &l.value, &l.output, &l.ln_gain, &l.ln_shift]);
            if let Some(m) = &l.mlp {
                out.extend([&m.w_in, &m.b_in, &m.w_out, &m.b_out, &m.ln_gain, &m.ln_shift]);
            }
        }
        out.push(&self.decoder);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix<T>> {
        let mut out = vec![&mut self.embedding, &mut self.positional];
        for l in &mut self.layers {
            out.extend([&mut l.query, &mut l.key, &mut l.value, &mut l.output, &mut l.ln_gain, &mut l.ln_shift]);
            if let Some(m) = &mut l.mlp {
                out.extend([&mut m.w_in, &mut m.b_in, &mut m.w_out, &mut m.b_out, &mut m.ln_gain, &mut m.ln_shift]);
            }
        }
        out.push(&mut self.decoder);
        out
    }

    /// Consumes the weights, yielding tensors in declared order.
    pub fn into_tensors(self) -> Vec<Matrix<T>> {
        let mut out = vec![self.embedding, self.positional];
        for l in self.layers {
            out.extend([l.query, l.key, l.value, l.output, l.ln_gain, l.ln_shift]);
            if let Some(m) = l.mlp {
                out.extend([m.w_in, m.b_in, m.w_out, m.b_out, m.ln_gain, m.ln_shift]);
            }
        }
        out.push(self.decoder);
        out
    }

    /// Rebuild from tensors in declared order, checking every shape.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Matrix<T>>) -> Result<Self> {
        let shapes = tensor_shapes(cfg);
        if tensors.len() != shapes.len() {
            return Err(Error::shape("TransformerWeights::from_tensors", shapes.len(), tensors.len()));
        }
        for ((name, r, c), t) in shapes.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::shape("TransformerWeights::from_tensors", format!("{name} {r}x{c}"), format!("{:?}", t.shape())));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("count checked above");
        let embedding = next();
        let positional = next();
        let mut layers = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let (query, key, value, output, ln_gain, ln_shift) = (next(), next(), next(), next(), next(), next());
            let mlp = if cfg.use_mlp {
                Some(MlpWeights {
                    w_in: next(),
                    b_in: next(),
                    w_out: next(),
                    b_out: next(),
                    ln_gain: next(),
                    ln_shift: next(),
                })
            } else {
                None
            };
            layers.push(LayerWeights {
                query,
                key,
                value,
                output,
                ln_gain,
                ln_shift,
                mlp,
            });
        }
        let decoder = next();
        Ok(Self {
            embedding,
            positional,
            layers,
            decoder,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    pub fn query_head(&self, layer: usize, head: usize, d_head: usize) -> Matrix<T> {
        self.layers[layer].query.column_block(head * d_head, d_head)
    }

    pub fn key_head(&self, layer: usize, head: usize, d_head: usize) -> Matrix<T> {
        self.layers[layer].key.column_block(head * d_head, d_head)
    }

    pub fn value_head(&self, layer: usize, head: usize, d_head: usize) -> Matrix<T> {
        self.layers[layer].value.column_block(head * d_head, d_head)
    }

    /// `gamma_h`: the `d_head x d_model` projection of head `h`.
    pub fn head_projection(&self, layer: usize, head: usize, d_head: usize) -> Matrix<T> {
        self.layers[layer].output.row_block(head * d_head, d_head)
    }

    pub fn cast<U: Scalar>(&self, cfg: &ModelConfig) -> TransformerWeights<U> {
        TransformerWeights::from_tensors(cfg, self.tensors().into_iter().map(|t| t.cast()).collect())
            .expect("shapes are preserved by cast")
    }
}

/// `(name, rows, cols)` of every parameter in declared order.
pub fn tensor_shapes(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = cfg.d_model;
    let mut out = vec![("embedding".to_string(), 1, d), ("positional".to_string(), cfg.max_seq_len, d)];
    for l in 0..cfg.layers {
        for (n, r, c) in [("query", d, d), ("key", d, d), ("value", d, d), ("output", d, d), ("ln_gain", 1, d), ("ln_shift", 1, d)] {
            out.push((format!("layer{l}.{n}"), r, c));
        }
        if cfg.use_mlp {
            let h = cfg.mlp_hidden;
            for (n, r, c) in [("mlp.w_in", d, h), ("mlp.b_in", 1, h), ("mlp.w_out", h, d), ("mlp.b_out", 1, d), ("mlp.ln_gain", 1, d), ("mlp.ln_shift", 1, d)] {
                out.push((format!("layer{l}.{n}"), r, c));
            }
        }
    }
    out.push(("decoder".to_string(), d, 1));
    out
}
