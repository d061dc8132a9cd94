//! Tape-based reverse-mode differentiation over dense matrices, with the
//! handful of sparse primitives graph attention needs.
//!
//! A [`Tape`] records every operation as it is applied. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse once and
//! returns the gradient of every node that depends on a trainable leaf.
//!
//! ```
//! use egat::autodiff::{Tape, Tensor};
//! use egat::Matrix;
//!
//! let mut w = Tensor::new(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
//! let mut tape = Tape::new();
//! let x = tape.param(&w);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! w.accumulate_grad(grads.get(x).unwrap());
//! assert_eq!(w.grad().as_slice(), &[2.0, -4.0, 6.0, 1.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{EgatError, Result};
use crate::matrix::{matmul_into, Matrix};
use crate::sparse::{spmm_into, spmm_transpose_into, Csr};

/// A trainable (or frozen) parameter with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    value: Matrix,
    grad: Matrix,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Tensor {
            value,
            grad,
            requires_grad: true,
        }
    }

    pub fn frozen(value: Matrix) -> Self {
        Tensor {
            requires_grad: false,
            ..Tensor::new(value)
        }
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }

    /// Adds `g` into the accumulator. Gradients from repeated backward
    /// passes sum until [`Tensor::zero_grad`] is called.
    pub fn accumulate_grad(&mut self, g: &Matrix) {
        if self.requires_grad {
            self.grad.add_assign(g);
        }
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Elu,
    Identity,
}

impl Activation {
    pub const ATTENTION_SLOPE: f64 = 0.2;

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative given input `x` and output `y`.
    #[inline]
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Elu => {
                if x >= 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Softmax within consecutive segments `offsets[k]..offsets[k + 1]`,
/// stabilized by subtracting each segment's maximum.
pub fn segment_softmax(scores: &[f64], offsets: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; scores.len()];
    segment_softmax_into(scores, offsets, &mut out)?;
    Ok(out)
}

fn segment_softmax_into(scores: &[f64], offsets: &[usize], out: &mut [f64]) -> Result<()> {
    if offsets.last().copied() != Some(scores.len()) {
        return Err(EgatError::dims(format!(
            "segments cover {:?} scores but {} were given",
            offsets.last(),
            scores.len()
        )));
    }
    for (k, w) in offsets.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        if lo == hi {
            return Err(EgatError::EmptySegment(k));
        }
        let seg = &scores[lo..hi];
        let max = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &s) in out[lo..hi].iter_mut().zip(seg) {
            *o = (s - max).exp();
            total += *o;
        }
        for o in &mut out[lo..hi] {
            *o /= total;
        }
    }
    Ok(())
}

enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    AddRow(Var, Var),
    Act(Var, Activation),
    RowSlice(Var, usize),
    ConcatCols(Vec<Var>),
    Spmm(&'a Csr, Var),
    Aggregate(&'a Csr, Var, Var),
    SegmentSoftmax(Var, &'a Csr),
    LogSoftmaxRows(Var),
    NllMean(Var, Vec<(usize, usize)>),
    Sum(Var),
    SumSquares(Var),
}

struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    requires_grad: bool,
}

/// Record of a forward computation. Sparse operands are borrowed for the
/// tape's lifetime `'a`.
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    non_finite: Option<usize>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Tape::new()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> EgatError {
    EgatError::dims(format!("{op}: incompatible shapes {}x{} and {}x{}", a.0, a.1, b.0, b.1))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            non_finite: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Fails if any recorded value is NaN or infinite.
    pub fn ensure_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(k) => Err(EgatError::NonFinite(format!(
                "tape node {k} ({})",
                self.op_name(k)
            ))),
            None => Ok(()),
        }
    }

    fn op_name(&self, k: usize) -> &'static str {
        match self.nodes[k].op {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mask",
            Op::AddRow(..) => "add_row",
            Op::Act(..) => "activation",
            Op::RowSlice(..) => "row_slice",
            Op::ConcatCols(..) => "concat",
            Op::Spmm(..) => "spmm",
            Op::Aggregate(..) => "aggregate",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::LogSoftmaxRows(..) => "log_softmax",
            Op::NllMean(..) => "nll",
            Op::Sum(..) => "sum",
            Op::SumSquares(..) => "sum_squares",
        }
    }

    /// Records a parameter; differentiable iff the tensor requires grad.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.value.clone(), Op::Leaf, t.requires_grad)
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let mut out = Matrix::zeros(va.rows(), vb.cols());
        matmul_into(va, vb, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, va.shape(), vb.shape()));
        }
        let data = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| f(*x, *y)).collect();
        Matrix::from_vec(va.rows(), va.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise product with a constant of the same size (dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Result<Var> {
        let va = self.value(a);
        if factors.len() != va.len() {
            return Err(EgatError::dims(format!(
                "mask of {} values for a {}x{} value",
                factors.len(),
                va.rows(),
                va.cols()
            )));
        }
        let data = va.as_slice().iter().zip(&factors).map(|(x, f)| x * f).collect();
        let out = Matrix::from_vec(va.rows(), va.cols(), data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::MulConst(a, factors), rg))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(shape_err("add_row", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        for r in 0..out.rows() {
            for (o, x) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                *o += x;
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::AddRow(a, b), rg))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|x| kind.apply(x));
        let rg = self.rg(a);
        self.push(out, Op::Act(a, kind), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.activation(a, Activation::LeakyRelu { slope })
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Elu)
    }

    /// Rows `start..end` of `a`.
    pub fn row_slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let va = self.value(a);
        if start > end || end > va.rows() {
            return Err(EgatError::dims(format!(
                "row slice {start}..{end} of a {}-row value",
                va.rows()
            )));
        }
        let c = va.cols();
        let out = Matrix::from_vec(end - start, c, va.as_slice()[start * c..end * c].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::RowSlice(a, start), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        if let Some(&p) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(shape_err("concat", (rows, 0), self.value(p).shape()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[c0..c0 + src.len()].copy_from_slice(src);
                c0 += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Sparse-dense product, differentiable in the dense operand.
    pub fn spmm(&mut self, sparse: &'a Csr, dense: Var) -> Result<Var> {
        let vd = self.value(dense);
        if sparse.cols() != vd.rows() {
            return Err(shape_err("spmm", (sparse.rows(), sparse.cols()), vd.shape()));
        }
        let mut out = Matrix::zeros(sparse.rows(), vd.cols());
        spmm_into(sparse, sparse.values(), vd, &mut out);
        let rg = self.rg(dense);
        Ok(self.push(out, Op::Spmm(sparse, dense), rg))
    }

    /// Weighted neighbor sum: row `r` of the output is
    /// `sum_k weights[k] * src[pattern.indices[k]]` over the entries of
    /// pattern row `r`. Differentiable in both weights and `src`.
    pub fn aggregate(&mut self, pattern: &'a Csr, weights: Var, src: Var) -> Result<Var> {
        let (vw, vs) = (self.value(weights), self.value(src));
        if vw.shape() != (pattern.nnz(), 1) || vs.rows() != pattern.cols() {
            return Err(shape_err("aggregate", vw.shape(), vs.shape()));
        }
        let mut out = Matrix::zeros(pattern.rows(), vs.cols());
        spmm_into(pattern, vw.as_slice(), vs, &mut out);
        let rg = self.rg(weights) || self.rg(src);
        Ok(self.push(out, Op::Aggregate(pattern, weights, src), rg))
    }

    /// Softmax of a column of scores within each row of `segments`.
    pub fn segment_softmax(&mut self, scores: Var, segments: &'a Csr) -> Result<Var> {
        let vs = self.value(scores);
        if vs.cols() != 1 {
            return Err(shape_err("segment_softmax", vs.shape(), (segments.nnz(), 1)));
        }
        let mut out = Matrix::zeros(vs.rows(), 1);
        segment_softmax_into(vs.as_slice(), segments.offsets(), out.as_mut_slice())?;
        let rg = self.rg(scores);
        Ok(self.push(out, Op::SegmentSoftmax(scores, segments), rg))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Mean of `-log_probs[row][class]` over the given picks.
    pub fn nll_mean(&mut self, log_probs: Var, picks: Vec<(usize, usize)>) -> Result<Var> {
        if picks.is_empty() {
            return Err(EgatError::EmptyMask);
        }
        let lp = self.value(log_probs);
        if let Some(&(r, c)) = picks.iter().find(|&&(r, c)| r >= lp.rows() || c >= lp.cols()) {
            return Err(EgatError::dims(format!(
                "pick ({r}, {c}) outside {}x{}",
                lp.rows(),
                lp.cols()
            )));
        }
        let total: f64 = picks.iter().map(|&(r, c)| -lp.get(r, c)).sum();
        let out = Matrix::scalar(total / picks.len() as f64);
        let rg = self.rg(log_probs);
        Ok(self.push(out, Op::NllMean(log_probs, picks), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum_squares());
        let rg = self.rg(a);
        self.push(out, Op::SumSquares(a), rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let n = self.value(a).len();
        self.mul_const(a, vec![factor; n])
    }

    /// Reverse pass from a `1 x 1` value. Returns the gradient of every
    /// node that depends on a trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.shape(loss);
        if (rows, cols) != (1, 1) {
            return Err(EgatError::NonScalarBackward { rows, cols });
        }
        self.ensure_finite()?;
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for k in (0..=loss.0).rev() {
            let node = &self.nodes[k];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[k].take() else { continue };
            self.propagate(k, &g, &mut grads);
        }
        if let Some(k) = grads.iter().position(|g| g.as_ref().is_some_and(|g| !g.is_finite())) {
            return Err(EgatError::NonFinite(format!("gradient of tape node {k}")));
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Matrix>], v: Var, f: impl FnOnce(&mut Matrix)) {
        if !self.rg(v) {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            let (r, c) = self.shape(v);
            *slot = Some(Matrix::zeros(r, c));
        }
        f(slot.as_mut().expect("initialized above"));
    }

    fn propagate(&self, k: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[k];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| {
                    // ga[i, k] += sum_j g[i, j] * b[k, j]
                    for i in 0..va.rows() {
                        let gi = g.row(i);
                        let out = ga.row_mut(i);
                        for (kk, o) in out.iter_mut().enumerate() {
                            *o += gi.iter().zip(vb.row(kk)).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accum(grads, *b, |gb| {
                    // gb[k, j] += sum_i a[i, k] * g[i, j]
                    for i in 0..va.rows() {
                        let gi = g.row(i);
                        for (kk, &aik) in va.row(i).iter().enumerate() {
                            if aik == 0.0 {
                                continue;
                            }
                            for (o, x) in gb.row_mut(kk).iter_mut().zip(gi) {
                                *o += aik * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| gb.add_assign(g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.accum(grads, *a, |ga| {
                    for ((o, x), y) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(vb.as_slice()) {
                        *o += x * y;
                    }
                });
                self.accum(grads, *b, |gb| {
                    for ((o, x), y) in gb.as_mut_slice().iter_mut().zip(g.as_slice()).zip(va.as_slice()) {
                        *o += x * y;
                    }
                });
            }
            Op::MulConst(a, factors) => {
                self.accum(grads, *a, |ga| {
                    for ((o, x), f) in ga.as_mut_slice().iter_mut().zip(g.as_slice()).zip(factors) {
                        *o += x * f;
                    }
                });
            }
            Op::AddRow(a, b) => {
                self.accum(grads, *a, |ga| ga.add_assign(g));
                self.accum(grads, *b, |gb| {
                    let gb = gb.as_mut_slice();
                    for r in 0..g.rows() {
                        for (o, x) in gb.iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Act(a, kind) => {
                let (x, y) = (self.value(*a), &node.value);
                self.accum(grads, *a, |ga| {
                    for (((o, gi), xi), yi) in ga
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(x.as_slice())
                        .zip(y.as_slice())
                    {
                        *o += gi * kind.derivative(*xi, *yi);
                    }
                });
            }
            Op::RowSlice(a, start) => {
                self.accum(grads, *a, |ga| {
                    let c = g.cols();
                    for (o, x) in ga.as_mut_slice()[start * c..].iter_mut().zip(g.as_slice()) {
                        *o += x;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut c0 = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    self.accum(grads, p, |gp| {
                        for r in 0..g.rows() {
                            for (o, x) in gp.row_mut(r).iter_mut().zip(&g.row(r)[c0..c0 + width]) {
                                *o += x;
                            }
                        }
                    });
                    c0 += width;
                }
            }
            Op::Spmm(sparse, dense) => {
                self.accum(grads, *dense, |gd| spmm_transpose_into(sparse, sparse.values(), g, gd));
            }
            Op::Aggregate(pattern, weights, src) => {
                let (vw, vs) = (self.value(*weights), self.value(*src));
                self.accum(grads, *weights, |gw| {
                    let gw = gw.as_mut_slice();
                    for r in 0..pattern.rows() {
                        let gr = g.row(r);
                        for kk in pattern.row_range(r) {
                            let s = vs.row(pattern.indices()[kk]);
                            gw[kk] += gr.iter().zip(s).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.accum(grads, *src, |gs| spmm_transpose_into(pattern, vw.as_slice(), g, gs));
            }
            Op::SegmentSoftmax(scores, segments) => {
                let y = node.value.as_slice();
                let gy = g.as_slice();
                self.accum(grads, *scores, |gs| {
                    let gs = gs.as_mut_slice();
                    for w in segments.offsets().windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        let dot: f64 = y[lo..hi].iter().zip(&gy[lo..hi]).map(|(a, b)| a * b).sum();
                        for s in lo..hi {
                            gs[s] += y[s] * (gy[s] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(a) => {
                let y = &node.value;
                self.accum(grads, *a, |ga| {
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for ((o, gi), yi) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o += gi - yi.exp() * total;
                        }
                    }
                });
            }
            Op::NllMean(lp, picks) => {
                let scale = g.item() / picks.len() as f64;
                self.accum(grads, *lp, |gl| {
                    for &(r, c) in picks {
                        let v = gl.get(r, c);
                        gl.set(r, c, v - scale);
                    }
                });
            }
            Op::Sum(a) => {
                let s = g.item();
                self.accum(grads, *a, |ga| {
                    for o in ga.as_mut_slice() {
                        *o += s;
                    }
                });
            }
            Op::SumSquares(a) => {
                let s = 2.0 * g.item();
                let va = self.value(*a);
                self.accum(grads, *a, |ga| {
                    for (o, x) in ga.as_mut_slice().iter_mut().zip(va.as_slice()) {
                        *o += s * x;
                    }
                });
            }
        }
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not depend on
    /// any trainable leaf.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
