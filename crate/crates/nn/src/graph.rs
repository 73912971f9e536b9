//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward pass.
//! Operations append nodes to the tape; [`Graph::backward`] walks the tape in
//! reverse and returns gradients for every parameter that was read.

use std::collections::HashMap;
use std::rc::Rc;

use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::{logsumexp, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Gelu(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    GatherRows(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    CrossEntropySum(NodeId, Vec<usize>),
    Sum(NodeId),
}

struct Node {
    op: Op,
    value: Option<Rc<Tensor>>,
    requires_grad: bool,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(p), None) => self.store.get(*p),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.value(id).shape()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value: Some(Rc::new(value)),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn constant_rc(&mut self, value: Rc<Tensor>) -> NodeId {
        self.nodes.push(Node {
            op: Op::Constant,
            value: Some(value),
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Reads a parameter. Repeated reads of the same id share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            requires_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMul(a, b), v, rg)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::MatMulT(a, b), v, rg)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(a);
        self.push(Op::Transpose(a), v, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Add(a, b), v, rg)
    }

    /// Adds the `1 x n` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a 1 x n row");
        assert_eq!(av.cols(), rv.cols(), "add_row column mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(Op::AddRow(a, row), v, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Mul(a, b), v, rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(Op::Scale(a, s), v, rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(Op::Sigmoid(a), v, rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        let rg = self.rg(a);
        self.push(Op::Gelu(a), v, rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows() {
            let lse = logsumexp(x.row(r));
            for o in v.row_mut(r) {
                *o = (*o - lse).exp();
            }
        }
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), v, rg)
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..v.rows() {
            let lse = logsumexp(x.row(r));
            for o in v.row_mut(r) {
                *o -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(Op::LogSoftmaxRows(a), v, rg)
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let gv = self.value(gain);
        let bv = self.value(bias);
        assert_eq!(gv.shape(), (1, cols), "layer_norm gain shape");
        assert_eq!(bv.shape(), (1, cols), "layer_norm bias shape");
        let mut xhat = Tensor::zeros(rows, cols);
        let mut out = Tensor::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..cols {
                let h = (row[c] - mean) * inv;
                xhat.set(r, c, h);
                out.set(r, c, h * gv.data()[c] + bv.data()[c]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            out,
            rg,
        )
    }

    /// Selects rows of `a` by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let av = self.value(a);
        let cols = av.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            assert!(i < av.rows(), "gather_rows index {i} out of range {}", av.rows());
            data.extend_from_slice(av.row(i));
        }
        let v = Tensor::from_vec(idx.len(), cols, data);
        let rg = self.rg(a);
        self.push(Op::GatherRows(a, idx.to_vec()), v, rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Tensor::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.row_mut(r)[offset..offset + pv.cols()].copy_from_slice(pv.row(r));
            }
            offset += pv.cols();
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatCols(parts.to_vec()), v, rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols out of range");
        let mut v = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        let rg = self.rg(a);
        self.push(Op::SliceCols(a, start, end), v, rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let v = Tensor::from_vec(rows, cols, data);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Op::ConcatRows(parts.to_vec()), v, rg)
    }

    /// Sum over rows of `-log softmax(logits)[row, targets[row]]`, as a
    /// `1 x 1` node.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.rows(), targets.len(), "cross_entropy target count");
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < lv.cols(), "cross_entropy target {t} out of range");
            let row = lv.row(r);
            loss += logsumexp(row) - row[t];
        }
        let rg = self.rg(logits);
        self.push(
            Op::CrossEntropySum(logits, targets.to_vec()),
            Tensor::scalar(loss),
            rg,
        )
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(Op::Sum(a), v, rg)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter
    /// read through [`Graph::param`].
    pub fn backward(&self, loss: NodeId) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar node");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut out = Grads::new(self.store.len());

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => out.accumulate_owned(*p, g),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, self.value(*a).t_matmul(&g));
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.matmul(self.value(*b)));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g.t_matmul(self.value(*a)));
                    }
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.rg(*row) {
                        let mut rsum = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (s, x) in rsum.data_mut().iter_mut().zip(g.row(r)) {
                                *s += x;
                            }
                        }
                        acc(&mut grads, *row, rsum);
                    }
                    if self.rg(*a) {
                        acc(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.rg(*b) {
                        acc(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads, *a, g.zip_map(y, |d, y| d * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut grads, *a, g.zip_map(y, |d, y| d * y * (1.0 - y)));
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, g.zip_map(x, |d, x| d * gelu_grad(x)));
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(d, y)| d * y).sum();
                        for ((o, d), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (d - dot);
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = node.value.as_ref().unwrap();
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, d), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = d - yv.exp() * total;
                        }
                    }
                    acc(&mut grads, *a, dx);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let (rows, cols) = xhat.shape();
                    let n = cols as f64;
                    if self.rg(*gain) || self.rg(*bias) {
                        let mut dg = Tensor::zeros(1, cols);
                        let mut db = Tensor::zeros(1, cols);
                        for r in 0..rows {
                            for c in 0..cols {
                                dg.data_mut()[c] += g.get(r, c) * xhat.get(r, c);
                                db.data_mut()[c] += g.get(r, c);
                            }
                        }
                        if self.rg(*gain) {
                            acc(&mut grads, *gain, dg);
                        }
                        if self.rg(*bias) {
                            acc(&mut grads, *bias, db);
                        }
                    }
                    if self.rg(*x) {
                        let mut dx = Tensor::zeros(rows, cols);
                        for r in 0..rows {
                            let dxhat: Vec<f64> =
                                (0..cols).map(|c| g.get(r, c) * gv.data()[c]).collect();
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 =
                                dxhat.iter().zip(xhat.row(r)).map(|(d, h)| d * h).sum();
                            for c in 0..cols {
                                let v = inv_std[r] / n
                                    * (n * dxhat[c] - sum_d - xhat.get(r, c) * sum_dx);
                                dx.set(r, c, v);
                            }
                        }
                        acc(&mut grads, *x, dx);
                    }
                }
                Op::GatherRows(a, idx) => {
                    let (rows, cols) = self.shape(*a);
                    let mut da = Tensor::zeros(rows, cols);
                    for (k, &i) in idx.iter().enumerate() {
                        for (o, d) in da.row_mut(i).iter_mut().zip(g.row(k)) {
                            *o += d;
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.rg(p) {
                            let mut dp = Tensor::zeros(g.rows(), w);
                            for r in 0..g.rows() {
                                dp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + w]);
                            }
                            acc(&mut grads, p, dp);
                        }
                        offset += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (rows, cols) = self.shape(*a);
                    let mut da = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        da.row_mut(r)[*start..*end].copy_from_slice(g.row(r));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        if self.rg(p) {
                            let data = g.data()[offset * cols..(offset + h) * cols].to_vec();
                            acc(&mut grads, p, Tensor::from_vec(h, cols, data));
                        }
                        offset += h;
                    }
                }
                Op::CrossEntropySum(logits, targets) => {
                    let lv = self.value(*logits);
                    let scale = g.item();
                    let mut dl = Tensor::zeros(lv.rows(), lv.cols());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let lse = logsumexp(row);
                        for (c, o) in dl.row_mut(r).iter_mut().enumerate() {
                            let p = (row[c] - lse).exp();
                            *o = scale * (p - if c == t { 1.0 } else { 0.0 });
                        }
                    }
                    acc(&mut grads, *logits, dl);
                }
                Op::Sum(a) => {
                    let (rows, cols) = self.shape(*a);
                    acc(&mut grads, *a, Tensor::filled(rows, cols, g.item()));
                }
            }
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_K * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}
