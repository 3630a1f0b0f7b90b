//! Reverse-mode gradient evaluation for the fixed transformer graph.
//!
//! The tape records matrix-valued primitives in execution order. Each
//! primitive keeps whatever forward state its vector-Jacobian product needs,
//! and [`GradTape::backward`] visits the record once, last to first.

use crate::error::{Error, Result};
use crate::numkit::layernorm::{layernorm_rows, layernorm_rows_backward, LayerNormCache};
use crate::numkit::matrix::gemm_into;
use crate::numkit::softmax::softmax_prefix_into;
use crate::numkit::Matrix;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Geometry of the causal attention primitive.
#[derive(Debug, Clone, Copy)]
pub struct AttentionShape {
    pub heads: usize,
    /// Tokens per sequence; rows `[b*seq_len, (b+1)*seq_len)` form sequence `b`.
    pub seq_len: usize,
    /// Multiplier applied to every query-key dot product.
    pub scale: f64,
}

enum Op<T> {
    Leaf {
        param: Option<usize>,
    },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `x + bias` where `bias` is `1 x cols`.
    AddRow(NodeId, NodeId),
    /// `x` row `r` plus `table` row `r % period`.
    AddPeriodic {
        x: NodeId,
        table: NodeId,
        period: usize,
    },
    Relu(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        cache: LayerNormCache<T>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        shape: AttentionShape,
        /// `[seq][head][t][s]`, zero above the diagonal.
        probs: Vec<T>,
    },
    GatherRows {
        x: NodeId,
        rows: Vec<usize>,
    },
    MeanSquaredError {
        pred: NodeId,
        target: Vec<T>,
    },
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
}

/// Ordered record of primitive operations.
pub struct GradTape<T> {
    nodes: Vec<Node<T>>,
    param_count: usize,
}

impl<T: Scalar> GradTape<T> {
    /// A tape whose parameters will be indexed `0..param_count`.
    pub fn new(param_count: usize) -> Self {
        Self {
            nodes: Vec::new(),
            param_count,
        }
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    /// Attention probabilities recorded by an attention node, laid out as
    /// `[seq][head][t][s]`.
    pub fn attention_probs(&self, id: NodeId) -> Option<(&[T], AttentionShape)> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, shape, .. } => Some((probs, *shape)),
            _ => None,
        }
    }

    /// Trainable leaf; its gradient is reported under `index`.
    pub fn param(&mut self, index: usize, value: Matrix<T>) -> NodeId {
        assert!(index < self.param_count, "parameter index out of range");
        self.push(value, Op::Leaf { param: Some(index) })
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(value, Op::Leaf { param: None })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn add_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape("add_row", format!("1x{}", xv.cols()), format!("{}x{}", bv.rows(), bv.cols())));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (o, &b) in value.row_mut(r).iter_mut().zip(bv.as_slice()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(x, bias)))
    }

    /// Adds row `r % period` of `table` to row `r` of `x`.
    pub fn add_periodic(&mut self, x: NodeId, table: NodeId, period: usize) -> Result<NodeId> {
        let (xv, tv) = (self.value(x), self.value(table));
        if tv.cols() != xv.cols() || period == 0 || period > tv.rows() || xv.rows() % period != 0 {
            return Err(Error::shape(
                "add_periodic",
                format!("table with >= {period} rows of width {}", xv.cols()),
                format!("{}x{} against {} rows", tv.rows(), tv.cols(), xv.rows()),
            ));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let src = tv.row(r % period);
            for (o, &p) in value.row_mut(r).iter_mut().zip(src) {
                *o += p;
            }
        }
        Ok(self.push(value, Op::AddPeriodic { x, table, period }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, shift: NodeId, eps: T) -> Result<NodeId> {
        let (xv, gv, sv) = (self.value(x), self.value(gain), self.value(shift));
        let d = xv.cols();
        if d < 2 {
            return Err(Error::InvalidConfig("layer normalization needs at least 2 features".into()));
        }
        if gv.shape() != (1, d) || sv.shape() != (1, d) {
            return Err(Error::shape("layer_norm", format!("1x{d} gain/shift"), format!("{:?}/{:?}", gv.shape(), sv.shape())));
        }
        let (value, cache) = layernorm_rows(xv, gv.as_slice(), sv.as_slice(), eps);
        Ok(self.push(value, Op::LayerNorm { x, gain, shift, cache }))
    }

    /// Causal multi-head attention core: for each sequence and head, row `t`
    /// of the output is `sum_{s<=t} softmax_s(scale * q_t . k_s) v_s` over that
    /// head's column block. Heads are concatenated along columns.
    pub fn causal_attention(&mut self, q: NodeId, k: NodeId, v: NodeId, shape: AttentionShape) -> Result<NodeId> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = qv.shape();
        if kv.shape() != (n, d) || vv.shape() != (n, d) {
            return Err(Error::shape("causal_attention", format!("{n}x{d}"), format!("{:?}/{:?}", kv.shape(), vv.shape())));
        }
        if shape.heads == 0 || d % shape.heads != 0 || shape.seq_len == 0 || n % shape.seq_len != 0 {
            return Err(Error::shape(
                "causal_attention",
                format!("{} heads dividing {d}, sequences of {}", shape.heads, shape.seq_len),
                format!("{n}x{d}"),
            ));
        }
        let (out, probs) = attention_forward(qv, kv, vv, shape);
        Ok(self.push(out, Op::Attention { q, k, v, shape, probs }))
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let xv = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::shape("gather_rows", format!("row < {}", xv.rows()), bad));
        }
        let cols = xv.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            data.extend_from_slice(xv.row(r));
        }
        let value = Matrix::from_vec(rows.len(), cols, data)?;
        Ok(self.push(value, Op::GatherRows { x, rows }))
    }

    /// Mean over entries of `(pred - target)^2`; `pred` must be a column.
    pub fn mean_squared_error(&mut self, pred: NodeId, target: Vec<T>) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.cols() != 1 || pv.rows() != target.len() || target.is_empty() {
            return Err(Error::shape("mean_squared_error", format!("{}x1", target.len()), format!("{}x{}", pv.rows(), pv.cols())));
        }
        let m = T::of(target.len() as f64);
        let loss = pv
            .as_slice()
            .iter()
            .zip(&target)
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum::<T>()
            / m;
        Ok(self.push(Matrix::filled(1, 1, loss), Op::MeanSquaredError { pred, target }))
    }

    /// Gradients of the scalar at `output` with respect to every parameter
    /// leaf. Parameters that do not influence `output` get `None`.
    pub fn backward(&self, output: NodeId) -> Result<Vec<Option<Matrix<T>>>> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::shape("backward", "1x1 output", format!("{:?}", out.shape())));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..=output.0).map(|_| None).collect();
        let mut params: Vec<Option<Matrix<T>>> = (0..self.param_count).map(|_| None).collect();
        grads[output.0] = Some(Matrix::filled(1, 1, T::one()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        accumulate(&mut params[*p], g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm_into(false, &g, true, bv, T::zero(), &mut da);
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm_into(true, av, false, &g, T::zero(), &mut db);
                    accumulate(&mut grads[a.0], da);
                    accumulate(&mut grads[b.0], db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g);
                }
                Op::AddRow(x, bias) => {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[bias.0], db);
                    accumulate(&mut grads[x.0], g);
                }
                Op::AddPeriodic { x, table, period } => {
                    let tv = self.value(*table);
                    let mut dt = Matrix::zeros(tv.rows(), tv.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in dt.row_mut(r % period).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[table.0], dt);
                    accumulate(&mut grads[x.0], g);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let mut dx = g;
                    for (d, &v) in dx.as_mut_slice().iter_mut().zip(xv.as_slice()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::LayerNorm { x, gain, shift, cache } => {
                    let gv = self.value(*gain);
                    let (dx, dgain, dshift) = layernorm_rows_backward(&g, gv.as_slice(), cache);
                    accumulate(&mut grads[x.0], dx);
                    accumulate(&mut grads[gain.0], Matrix::row_vector(&dgain));
                    accumulate(&mut grads[shift.0], Matrix::row_vector(&dshift));
                }
                Op::Attention { q, k, v, shape, probs } => {
                    let (dq, dk, dv) = attention_backward(self.value(*q), self.value(*k), self.value(*v), probs, *shape, &g);
                    accumulate(&mut grads[q.0], dq);
                    accumulate(&mut grads[k.0], dk);
                    accumulate(&mut grads[v.0], dv);
                }
                Op::GatherRows { x, rows } => {
                    let xv = self.value(*x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for (i, &r) in rows.iter().enumerate() {
                        for (o, &v) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
                Op::MeanSquaredError { pred, target } => {
                    let pv = self.value(*pred);
                    let s = g.get(0, 0) * T::of(2.0) / T::of(target.len() as f64);
                    let data = pv.as_slice().iter().zip(target).map(|(&p, &y)| s * (p - y)).collect();
                    accumulate(&mut grads[pred.0], Matrix::from_vec(pv.rows(), 1, data)?);
                }
            }
        }
        Ok(params)
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Matrix<T>>, g: Matrix<T>) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn attention_forward<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, v: &Matrix<T>, shape: AttentionShape) -> (Matrix<T>, Vec<T>) {
    let (n, d) = q.shape();
    let t_len = shape.seq_len;
    let dh = d / shape.heads;
    let scale = T::of(shape.scale);
    let seqs = n / t_len;
    let (ti, di) = (t_len as isize, d as isize);
    let mut out = Matrix::zeros(n, d);
    let mut probs = vec![T::zero(); seqs * shape.heads * t_len * t_len];
    let mut scores = vec![T::zero(); t_len * t_len];
    for b in 0..seqs {
        for h in 0..shape.heads {
            let off = b * t_len * d + h * dh;
            // scores = scale * Q_h K_h^T
            T::gemm(t_len, dh, t_len, scale, &q.as_slice()[off..], di, 1, &k.as_slice()[off..], 1, di, T::zero(), &mut scores, ti, 1);
            let pblock = &mut probs[(b * shape.heads + h) * t_len * t_len..][..t_len * t_len];
            for t in 0..t_len {
                softmax_prefix_into(&scores[t * t_len..][..t_len], t, &mut pblock[t * t_len..][..t_len]);
            }
            // probabilities above the diagonal are zero, so the full product is causal
            T::gemm(t_len, t_len, dh, T::one(), pblock, ti, 1, &v.as_slice()[off..], di, 1, T::zero(), &mut out.as_mut_slice()[off..], di, 1);
        }
    }
    (out, probs)
}

fn attention_backward<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    probs: &[T],
    shape: AttentionShape,
    dout: &Matrix<T>,
) -> (Matrix<T>, Matrix<T>, Matrix<T>) {
    let (n, d) = q.shape();
    let t_len = shape.seq_len;
    let dh = d / shape.heads;
    let scale = T::of(shape.scale);
    let seqs = n / t_len;
    let (ti, di) = (t_len as isize, d as isize);
    let mut dq = Matrix::zeros(n, d);
    let mut dk = Matrix::zeros(n, d);
    let mut dv = Matrix::zeros(n, d);
    let mut dz = vec![T::zero(); t_len * t_len];
    let (zero, one) = (T::zero(), T::one());
    for b in 0..seqs {
        for h in 0..shape.heads {
            let off = b * t_len * d + h * dh;
            let p = &probs[(b * shape.heads + h) * t_len * t_len..][..t_len * t_len];
            let g = &dout.as_slice()[off..];
            // dV_h = P^T dO_h
            T::gemm(t_len, t_len, dh, one, p, 1, ti, g, di, 1, zero, &mut dv.as_mut_slice()[off..], di, 1);
            // dP = dO_h V_h^T, then the softmax Jacobian row by row
            T::gemm(t_len, dh, t_len, one, g, di, 1, &v.as_slice()[off..], 1, di, zero, &mut dz, ti, 1);
            for t in 0..t_len {
                let prow = &p[t * t_len..][..=t];
                let zrow = &mut dz[t * t_len..][..t_len];
                let dot = prow.iter().zip(zrow.iter()).map(|(&a, &b)| a * b).sum::<T>();
                for (z, &pp) in zrow.iter_mut().zip(prow) {
                    *z = scale * pp * (*z - dot);
                }
                zrow[t + 1..].fill(zero);
            }
            // dQ_h = dZ K_h, dK_h = dZ^T Q_h
            T::gemm(t_len, t_len, dh, one, &dz, ti, 1, &k.as_slice()[off..], di, 1, zero, &mut dq.as_mut_slice()[off..], di, 1);
            T::gemm(t_len, t_len, dh, one, &dz, 1, ti, &q.as_slice()[off..], di, 1, zero, &mut dk.as_mut_slice()[off..], di, 1);
        }
    }
    (dq, dk, dv)
}
