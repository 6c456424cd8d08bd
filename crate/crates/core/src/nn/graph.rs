//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation applied
//! to it. Nodes are appended in evaluation order, so the tape is already
//! topologically sorted and [`Graph::backward`] is a single reverse sweep.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::matrix::{gemm, matmul, Matrix, Trans};
use super::params::{Gradients, ParamId, ParamStore};
use super::real::Real;
use super::NnError;

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Stored<T> {
    Owned(Matrix<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, tb: Trans },
    AddBias { x: Var, bias: Var },
    Add { a: Var, b: Var },
    Sum { parts: Vec<Var> },
    Scale { a: Var, s: T },
    Relu { a: Var },
    MulConst { a: Var, factor: Matrix<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Matrix<T>, inv_std: Vec<T> },
    Softmax { x: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    ZeroRows { x: Var, valid: Vec<bool> },
    MeanRows { x: Var, valid: Vec<bool>, count: usize },
    CrossEntropy { logits: Var, label: usize, probs: Vec<T> },
    SquaredError { pred: Var, target: T },
    BlockCombine { weights: Var, x: Var, blocks: usize },
}

struct Node<T> {
    value: Stored<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Real> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: Vec<Option<Var>>,
    rng: Option<ChaCha8Rng>,
    stochastic: bool,
}

impl<'a, T: Real> Graph<'a, T> {
    /// Inference graph: dropout is the identity.
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self { params, nodes: Vec::new(), param_nodes: vec![None; params.len()], rng: None, stochastic: false }
    }

    /// Training graph: dropout draws its masks from `rng`.
    pub fn training(params: &'a ParamStore<T>, rng: ChaCha8Rng) -> Self {
        let mut g = Self::new(params);
        g.rng = Some(rng);
        g
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    /// True once any random dropout mask has been applied.
    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    /// Hands the dropout stream back so the caller can continue it.
    pub fn into_rng(self) -> Option<ChaCha8Rng> {
        self.rng
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        match &self.nodes[v.0].value {
            Stored::Owned(m) => m,
            Stored::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Stored::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Stored::Param(id), op: Op::Leaf, requires_grad: true });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Leaf holding data that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.nodes.push(Node { value: Stored::Owned(value), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// `a · b`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = matmul(self.value(a), Trans::No, self.value(b), Trans::No)?;
        Ok(self.push(out, Op::MatMul { a, b, tb: Trans::No }, &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let out = matmul(self.value(a), Trans::No, self.value(b), Trans::Yes)?;
        Ok(self.push(out, Op::MatMul { a, b, tb: Trans::Yes }, &[a, b]))
    }

    /// Adds a `1×cols` bias to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (bx, bb) = (self.value(x), self.value(bias));
        if bb.rows() != 1 || bb.cols() != bx.cols() {
            return Err(NnError::Shape(format!("bias {:?} does not fit input {:?}", bb.shape(), bx.shape())));
        }
        let mut out = bx.clone();
        let b = bb.as_slice();
        for i in 0..out.rows() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(b) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddBias { x, bias }, &[x, bias]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.shape() != mb.shape() {
            return Err(NnError::Shape(format!("add {:?} + {:?}", ma.shape(), mb.shape())));
        }
        let mut out = ma.clone();
        out.add_assign(mb);
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise sum of same-shaped nodes, accumulated left to right.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = *parts.first().ok_or_else(|| NnError::Shape("sum of zero terms".into()))?;
        let mut out = self.value(first).clone();
        for &p in &parts[1..] {
            let m = self.value(p);
            if m.shape() != out.shape() {
                return Err(NnError::Shape(format!("sum {:?} + {:?}", out.shape(), m.shape())));
            }
            out.add_assign(m);
        }
        Ok(self.push(out, Op::Sum { parts: parts.to_vec() }, parts))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale { a, s }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu { a }, &[a])
    }

    /// Inverted dropout: kept entries are scaled by `1/(1-p)`. Identity when
    /// the graph is not training or `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var, NnError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.rng.is_none() || p == 0.0 {
            return Ok(a);
        }
        let (r, c) = self.value(a).shape();
        let rng = self.rng.as_mut().expect("training graph");
        let keep = T::of(1.0 / (1.0 - p));
        let factor = Matrix::from_fn(r, c, |_, _| if rng.random::<f64>() < p { T::zero() } else { keep });
        self.stochastic = true;
        let mut out = self.value(a).clone();
        for (o, &f) in out.as_mut_slice().iter_mut().zip(factor.as_slice()) {
            *o *= f;
        }
        Ok(self.push(out, Op::MulConst { a, factor }, &[a]))
    }

    /// Row-wise layer normalization with learned `1×cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NnError> {
        let mx = self.value(x);
        let (rows, cols) = mx.shape();
        if self.shape(gain) != (1, cols) || self.shape(bias) != (1, cols) {
            return Err(NnError::Shape(format!("layer norm gain/bias must be 1x{cols}")));
        }
        let eps = T::of(LAYER_NORM_EPS);
        let n = T::of(cols as f64);
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = mx.row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            for (h, &v) in xhat.row_mut(i).iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
        }
        let (g, b) = (self.value(gain).as_slice(), self.value(bias).as_slice());
        let mut out = xhat.clone();
        for i in 0..rows {
            for ((o, &gj), &bj) in out.row_mut(i).iter_mut().zip(g).zip(b) {
                *o = *o * gj + bj;
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias]))
    }

    /// Row-wise softmax. Columns whose `key_valid` entry is false get weight
    /// zero, which is the same as adding −∞ before normalizing.
    pub fn softmax_rows(&mut self, x: Var, key_valid: Option<&[bool]>) -> Result<Var, NnError> {
        let mx = self.value(x);
        if let Some(kv) = key_valid {
            if kv.len() != mx.cols() {
                return Err(NnError::Shape(format!("key mask of {} for {} columns", kv.len(), mx.cols())));
            }
        }
        let valid = |j: usize| key_valid.is_none_or(|kv| kv[j]);
        let mut out = Matrix::zeros(mx.rows(), mx.cols());
        for i in 0..mx.rows() {
            let row = mx.row(i);
            let max = (0..row.len()).filter(|&j| valid(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let orow = out.row_mut(i);
            let mut z = T::zero();
            for j in 0..row.len() {
                if valid(j) {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            orow.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(out, Op::Softmax { x }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let mx = self.value(x);
        if start + len > mx.cols() {
            return Err(NnError::Shape(format!("columns {start}..{} of {}", start + len, mx.cols())));
        }
        let out = mx.slice_cols(start, len);
        Ok(self.push(out, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hcat(&mats)?;
        Ok(self.push(out, Op::ConcatCols { parts: parts.to_vec() }, parts))
    }

    /// Zeroes the rows whose mask entry is false.
    pub fn zero_rows(&mut self, x: Var, valid: &[bool]) -> Result<Var, NnError> {
        let mut out = self.value(x).clone();
        if valid.len() != out.rows() {
            return Err(NnError::Shape(format!("row mask of {} for {} rows", valid.len(), out.rows())));
        }
        for (i, &keep) in valid.iter().enumerate() {
            if !keep {
                out.row_mut(i).iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(self.push(out, Op::ZeroRows { x, valid: valid.to_vec() }, &[x]))
    }

    /// Mean over the valid rows, producing a `1×cols` node.
    pub fn mean_rows(&mut self, x: Var, valid: &[bool]) -> Result<Var, NnError> {
        let mx = self.value(x);
        if valid.len() != mx.rows() {
            return Err(NnError::Shape(format!("row mask of {} for {} rows", valid.len(), mx.rows())));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(NnError::Shape("mean over zero valid rows".into()));
        }
        let mut acc = vec![T::zero(); mx.cols()];
        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
            for (a, &v) in acc.iter_mut().zip(mx.row(i)) {
                *a += v;
            }
        }
        let n = T::of(count as f64);
        acc.iter_mut().for_each(|a| *a /= n);
        let out = Matrix::row_vector(acc);
        Ok(self.push(out, Op::MeanRows { x, valid: valid.to_vec(), count }, &[x]))
    }

    /// `−log softmax(logits)[label]` for a `1×C` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, NnError> {
        let ml = self.value(logits);
        if ml.rows() != 1 {
            return Err(NnError::Shape(format!("cross entropy expects a logit row, got {:?}", ml.shape())));
        }
        if label >= ml.cols() {
            return Err(NnError::Label(label));
        }
        let row = ml.as_slice();
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        let probs: Vec<T> = row.iter().map(|&v| (v - log_z).exp()).collect();
        let loss = log_z - row[label];
        Ok(self.push(Matrix::scalar(loss), Op::CrossEntropy { logits, label, probs }, &[logits]))
    }

    /// `(pred − target)²` for a 1×1 prediction.
    pub fn squared_error(&mut self, pred: Var, target: T) -> Result<Var, NnError> {
        let mp = self.value(pred);
        if mp.shape() != (1, 1) {
            return Err(NnError::Shape(format!("squared error expects 1x1, got {:?}", mp.shape())));
        }
        let d = mp.item() - target;
        Ok(self.push(Matrix::scalar(d * d), Op::SquaredError { pred, target }, &[pred]))
    }

    /// `Σ_k weights[k] · x[:, k·D..(k+1)·D]` where `x` holds `blocks`
    /// horizontally stacked blocks of width `D`.
    pub fn block_combine(&mut self, weights: Var, x: Var, blocks: usize) -> Result<Var, NnError> {
        let (mw, mx) = (self.value(weights), self.value(x));
        if mw.shape() != (1, blocks) || blocks == 0 || mx.cols() % blocks != 0 {
            return Err(NnError::Shape(format!(
                "block combine: weights {:?}, input {:?}, {blocks} blocks",
                mw.shape(),
                mx.shape()
            )));
        }
        let d = mx.cols() / blocks;
        let w = mw.as_slice();
        let mut out = Matrix::zeros(mx.rows(), d);
        for i in 0..mx.rows() {
            let row = mx.row(i);
            let orow = out.row_mut(i);
            for (k, &wk) in w.iter().enumerate() {
                for (o, &v) in orow.iter_mut().zip(&row[k * d..(k + 1) * d]) {
                    *o += wk * v;
                }
            }
        }
        Ok(self.push(out, Op::BlockCombine { weights, x, blocks }, &[weights, x]))
    }

    /// Reverse sweep from a scalar node, returning parameter gradients
    /// aligned with the borrowed store (zero for unused parameters).
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        if self.shape(loss) != (1, 1) {
            return Err(NnError::Shape(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(dout) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dout);
                }
                Op::MatMul { a, b, tb } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let g = self.slot(&mut grads, *a);
                        match tb {
                            Trans::No => gemm(T::one(), &dout, Trans::No, vb, Trans::Yes, T::one(), g)?,
                            Trans::Yes => gemm(T::one(), &dout, Trans::No, vb, Trans::No, T::one(), g)?,
                        }
                    }
                    if self.needs(*b) {
                        let g = self.slot(&mut grads, *b);
                        match tb {
                            Trans::No => gemm(T::one(), va, Trans::Yes, &dout, Trans::No, T::one(), g)?,
                            Trans::Yes => gemm(T::one(), &dout, Trans::Yes, va, Trans::No, T::one(), g)?,
                        }
                    }
                }
                Op::AddBias { x, bias } => {
                    if self.needs(*bias) {
                        let g = self.slot(&mut grads, *bias);
                        let gs = g.as_mut_slice();
                        for i in 0..dout.rows() {
                            for (a, &v) in gs.iter_mut().zip(dout.row(i)) {
                                *a += v;
                            }
                        }
                    }
                    if self.needs(*x) {
                        self.slot(&mut grads, *x).add_assign(&dout);
                    }
                }
                Op::Add { a, b } => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            self.slot(&mut grads, v).add_assign(&dout);
                        }
                    }
                }
                Op::Sum { parts } => {
                    for &v in parts {
                        if self.needs(v) {
                            self.slot(&mut grads, v).add_assign(&dout);
                        }
                    }
                }
                Op::Scale { a, s } => {
                    if self.needs(*a) {
                        let g = self.slot(&mut grads, *a);
                        for (o, &d) in g.as_mut_slice().iter_mut().zip(dout.as_slice()) {
                            *o += *s * d;
                        }
                    }
                }
                Op::Relu { a } => {
                    if self.needs(*a) {
                        let va = self.value(*a).as_slice();
                        let g = self.slot(&mut grads, *a);
                        for ((o, &d), &x) in g.as_mut_slice().iter_mut().zip(dout.as_slice()).zip(va) {
                            if x > T::zero() {
                                *o += d;
                            }
                        }
                    }
                }
                Op::MulConst { a, factor } => {
                    if self.needs(*a) {
                        let g = self.slot(&mut grads, *a);
                        for ((o, &d), &f) in g.as_mut_slice().iter_mut().zip(dout.as_slice()).zip(factor.as_slice()) {
                            *o += d * f;
                        }
                    }
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (rows, cols) = xhat.shape();
                    if self.needs(*gain) {
                        let g = self.slot(&mut grads, *gain).as_mut_slice();
                        for i in 0..rows {
                            for ((a, &d), &h) in g.iter_mut().zip(dout.row(i)).zip(xhat.row(i)) {
                                *a += d * h;
                            }
                        }
                    }
                    if self.needs(*bias) {
                        let g = self.slot(&mut grads, *bias).as_mut_slice();
                        for i in 0..rows {
                            for (a, &d) in g.iter_mut().zip(dout.row(i)) {
                                *a += d;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let gv = self.value(*gain).as_slice();
                        let n = T::of(cols as f64);
                        let mut dx = Matrix::zeros(rows, cols);
                        let mut dxhat = vec![T::zero(); cols];
                        for i in 0..rows {
                            let (d, h) = (dout.row(i), xhat.row(i));
                            for j in 0..cols {
                                dxhat[j] = d[j] * gv[j];
                            }
                            let mean_d = dxhat.iter().copied().sum::<T>() / n;
                            let mean_dh = dxhat.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / n;
                            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                                *o = inv_std[i] * (dxhat[j] - mean_d - h[j] * mean_dh);
                            }
                        }
                        self.slot(&mut grads, *x).add_assign(&dx);
                    }
                }
                Op::Softmax { x } => {
                    if self.needs(*x) {
                        let y = self.value(Var(idx));
                        let mut dx = Matrix::zeros(y.rows(), y.cols());
                        for i in 0..y.rows() {
                            let (yr, dr) = (y.row(i), dout.row(i));
                            let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                            for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
                                *o = yr[j] * (dr[j] - dot);
                            }
                        }
                        self.slot(&mut grads, *x).add_assign(&dx);
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.needs(*x) {
                        let g = self.slot(&mut grads, *x);
                        let len = dout.cols();
                        for i in 0..dout.rows() {
                            for (o, &d) in g.row_mut(i)[*start..*start + len].iter_mut().zip(dout.row(i)) {
                                *o += d;
                            }
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let g = self.slot(&mut grads, p);
                            for i in 0..dout.rows() {
                                for (o, &d) in g.row_mut(i).iter_mut().zip(&dout.row(i)[offset..offset + w]) {
                                    *o += d;
                                }
                            }
                        }
                        offset += w;
                    }
                }
                Op::ZeroRows { x, valid } => {
                    if self.needs(*x) {
                        let g = self.slot(&mut grads, *x);
                        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
                            for (o, &d) in g.row_mut(i).iter_mut().zip(dout.row(i)) {
                                *o += d;
                            }
                        }
                    }
                }
                Op::MeanRows { x, valid, count } => {
                    if self.needs(*x) {
                        let inv = T::one() / T::of(*count as f64);
                        let g = self.slot(&mut grads, *x);
                        for (i, _) in valid.iter().enumerate().filter(|(_, &v)| v) {
                            for (o, &d) in g.row_mut(i).iter_mut().zip(dout.as_slice()) {
                                *o += d * inv;
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, label, probs } => {
                    if self.needs(*logits) {
                        let d = dout.item();
                        let g = self.slot(&mut grads, *logits).as_mut_slice();
                        for (j, (o, &p)) in g.iter_mut().zip(probs).enumerate() {
                            let target = if j == *label { T::one() } else { T::zero() };
                            *o += d * (p - target);
                        }
                    }
                }
                Op::SquaredError { pred, target } => {
                    if self.needs(*pred) {
                        let p = self.value(*pred).item();
                        let g = self.slot(&mut grads, *pred).as_mut_slice();
                        g[0] += dout.item() * T::of(2.0) * (p - *target);
                    }
                }
                Op::BlockCombine { weights, x, blocks } => {
                    let (w, mx) = (self.value(*weights).as_slice().to_vec(), self.value(*x));
                    let d = mx.cols() / blocks;
                    if self.needs(*weights) {
                        let mut gw = vec![T::zero(); *blocks];
                        for i in 0..mx.rows() {
                            let (row, dr) = (mx.row(i), dout.row(i));
                            for (k, acc) in gw.iter_mut().enumerate() {
                                *acc += row[k * d..(k + 1) * d].iter().zip(dr).map(|(&a, &b)| a * b).sum::<T>();
                            }
                        }
                        let g = self.slot(&mut grads, *weights).as_mut_slice();
                        for (o, v) in g.iter_mut().zip(gw) {
                            *o += v;
                        }
                    }
                    if self.needs(*x) {
                        let g = self.slot(&mut grads, *x);
                        for i in 0..dout.rows() {
                            let dr = dout.row(i).to_vec();
                            let grow = g.row_mut(i);
                            for (k, &wk) in w.iter().enumerate() {
                                for (o, &dv) in grow[k * d..(k + 1) * d].iter_mut().zip(&dr) {
                                    *o += wk * dv;
                                }
                            }
                        }
                    }
                }
            }
        }

        let values = self
            .params
            .ids()
            .map(|id| match self.param_nodes[id.0].and_then(|v| grads[v.0].take()) {
                Some(g) => g,
                None => {
                    let (r, c) = self.params.get(id).shape();
                    Matrix::zeros(r, c)
                }
            })
            .collect();
        Ok(Gradients::from_values(values))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Matrix<T>>], v: Var) -> &'g mut Matrix<T> {
        let (r, c) = self.shape(v);
        grads[v.0].get_or_insert_with(|| Matrix::zeros(r, c))
    }
}
