//! Reverse-mode autodiff over row-major matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation records
//! its inputs plus whatever it needs for the backward sweep, and
//! [`Graph::backward`] walks the tape once in reverse.

use nalgebra::DMatrix;

use super::params::{ParamId, ParamStore};
use super::tensor::{Real, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize within each row (over columns).
    Rows,
    /// Normalize within each column (over rows).
    Cols,
}

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log {
        a: Var,
        floor: F,
    },
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        a: Var,
        start: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        a: Var,
        index: Vec<usize>,
    },
    SegmentMax {
        a: Var,
        argmax: Vec<usize>,
    },
    NormalizeRows {
        a: Var,
        eps: F,
        norms: Vec<F>,
    },
    Softmax {
        a: Var,
        axis: Axis,
    },
    LogSoftmaxRows(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: NormAxis,
        xhat: Tensor<F>,
        inv_std: Vec<F>,
    },
    SumAll(Var),
    DotConst {
        a: Var,
        weights: Tensor<F>,
    },
    SecondSingular {
        a: Var,
        uv: Option<Tensor<F>>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NormAxis {
    /// Batch statistics per column; every row is coupled.
    BatchCols,
    /// Fixed (running) statistics per column; rows independent.
    FixedCols,
    /// Per-row statistics over columns (layer norm).
    Rows,
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Batch statistics emitted by a training-mode batch norm, for running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable leaf not tied to a parameter store (used by gradient checks).
    pub fn variable(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Bind a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(p, _)| *p == id) {
            return v;
        }
        let trainable = store.is_trainable(id);
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.params.push((id, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a) @ op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Var {
        let out = Tensor::matmul(self.value(a), ta, self.value(b), tb);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    /// `x @ w + b` with `b` a 1×out row broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let mut out = Tensor::matmul(self.value(x), false, self.value(w), false);
        if let Some(b) = b {
            let bias = self.value(b);
            assert_eq!(bias.shape(), (1, out.cols()), "linear bias shape");
            let bias = bias.data().to_vec();
            for r in 0..out.rows() {
                for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias) {
                    *o += bv;
                }
            }
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(out, Op::Linear { x, w, b }, ng)
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        Tensor::from_vec(
            ta.rows(),
            ta.cols(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, out.cols()), "add_row shape");
        let rv = rv.data().to_vec();
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&rv) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let mut out = self.value(a).clone();
        let rv = self.value(row);
        assert_eq!(rv.shape(), (1, out.cols()), "mul_row shape");
        let rv = rv.data().to_vec();
        for r in 0..out.rows() {
            for (o, &x) in out.row_mut(r).iter_mut().zip(&rv) {
                *o *= x;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(out, Op::MulRow(a, row), ng)
    }

    /// Scales row `r` of `a` by `col[r]`, where `col` is r×1.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let mut out = self.value(a).clone();
        let cv = self.value(col);
        assert_eq!(cv.shape(), (out.rows(), 1), "mul_col shape");
        let cv = cv.data().to_vec();
        for (r, &s) in cv.iter().enumerate() {
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        let ng = self.ng(a) || self.ng(col);
        self.push(out, Op::MulCol(a, col), ng)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > F::zero() { x } else { F::zero() });
        let ng = self.ng(a);
        self.push(out, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| F::one() / (F::one() + (-x).exp()));
        let ng = self.ng(a);
        self.push(out, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.tanh());
        let ng = self.ng(a);
        self.push(out, Op::Tanh(a), ng)
    }

    /// `ln(max(a, floor))`; zero gradient where the floor is active.
    pub fn log(&mut self, a: Var, floor: F) -> Var {
        let out = self.value(a).map(|x| x.max(floor).ln());
        let ng = self.ng(a);
        self.push(out, Op::Log { a, floor }, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(out, Op::Transpose(a), ng)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let out = self.value(a).clone().reshaped(rows, cols);
        let ng = self.ng(a);
        self.push(out, Op::Reshape(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(t.rows(), len);
        for r in 0..t.rows() {
            out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        self.push(out, Op::SliceCols { a, start }, ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert!(start + len <= t.rows(), "slice_rows out of range");
        let c = t.cols();
        let out = Tensor::from_vec(len, c, t.data()[start * c..(start + len) * c].to_vec());
        let ng = self.ng(a);
        self.push(out, Op::SliceRows { a, start }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + t.cols()].copy_from_slice(t.row(r));
            }
            off += t.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows col mismatch");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(index.len(), c, data);
        let ng = self.ng(a);
        self.push(
            out,
            Op::GatherRows {
                a,
                index: index.to_vec(),
            },
            ng,
        )
    }

    /// Column-wise max over each contiguous row range `[start, start + len)`.
    pub fn segment_max(&mut self, a: Var, ranges: &[(usize, usize)]) -> Var {
        let t = self.value(a);
        let c = t.cols();
        let mut out = Tensor::zeros(ranges.len(), c);
        let mut argmax = vec![0usize; ranges.len() * c];
        for (s, &(start, len)) in ranges.iter().enumerate() {
            assert!(len > 0, "segment_max over an empty range");
            let orow = out.row_mut(s);
            orow.copy_from_slice(t.row(start));
            let am = &mut argmax[s * c..(s + 1) * c];
            am.iter_mut().for_each(|x| *x = start);
            for r in start + 1..start + len {
                for (j, &x) in t.row(r).iter().enumerate() {
                    if x > orow[j] {
                        orow[j] = x;
                        am[j] = r;
                    }
                }
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentMax { a, argmax }, ng)
    }

    /// `x / (‖x‖ + eps)` per row.
    pub fn normalize_rows(&mut self, a: Var, eps: F) -> Var {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|&x| x * x).sum::<F>().sqrt();
            let d = n + eps;
            row.iter_mut().for_each(|x| *x /= d);
            norms.push(n);
        }
        let ng = self.ng(a);
        self.push(out, Op::NormalizeRows { a, eps, norms }, ng)
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Var {
        let out = softmax(self.value(a), axis);
        let ng = self.ng(a);
        self.push(out, Op::Softmax { a, axis }, ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<F>().ln();
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmaxRows(a), ng)
    }

    /// Training-mode batch norm: per-column statistics over all rows, then `gamma * xhat + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> (Var, BatchStats<F>) {
        let t = self.value(x);
        let (n, c) = t.shape();
        let nf = F::from_usize(n.max(1)).unwrap();
        let mut mean = vec![F::zero(); c];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(t.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![F::zero(); c];
        for r in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(t.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        var.iter_mut().for_each(|s| *s /= nf);
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let out = self.norm_apply(x, gamma, beta, NormAxis::BatchCols, &mean, inv_std);
        (out, BatchStats { mean, var })
    }

    /// Eval-mode batch norm with fixed statistics; rows stay independent.
    pub fn batch_norm_fixed(&mut self, x: Var, gamma: Var, beta: Var, mean: &[F], var: &[F], eps: F) -> Var {
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        self.norm_apply(x, gamma, beta, NormAxis::FixedCols, mean, inv_std)
    }

    /// Layer norm over the columns of each row.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let t = self.value(x);
        let (n, c) = t.shape();
        let cf = F::from_usize(c).unwrap();
        let mut mean = Vec::with_capacity(n);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = t.row(r);
            let m = row.iter().copied().sum::<F>() / cf;
            let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<F>() / cf;
            mean.push(m);
            inv_std.push(F::one() / (v + eps).sqrt());
        }
        self.norm_apply(x, gamma, beta, NormAxis::Rows, &mean, inv_std)
    }

    fn norm_apply(&mut self, x: Var, gamma: Var, beta: Var, axis: NormAxis, mean: &[F], inv_std: Vec<F>) -> Var {
        let t = self.value(x);
        let (n, c) = t.shape();
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        assert_eq!(g.len(), c, "norm gamma width");
        assert_eq!(b.len(), c, "norm beta width");
        let mut xhat = t.clone();
        let mut out = Tensor::zeros(n, c);
        for r in 0..n {
            let xr = xhat.row_mut(r);
            match axis {
                NormAxis::Rows => {
                    for v in xr.iter_mut() {
                        *v = (*v - mean[r]) * inv_std[r];
                    }
                }
                _ => {
                    for ((v, &m), &s) in xr.iter_mut().zip(mean).zip(&inv_std) {
                        *v = (*v - m) * s;
                    }
                }
            }
            let xr = xhat.row(r);
            for (((o, &xh), &gv), &bv) in out.row_mut(r).iter_mut().zip(xr).zip(&g).zip(&b) {
                *o = gv * xh + bv;
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<F>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// Scalar `Σ a ⊙ weights` for a constant weight matrix.
    pub fn dot_const(&mut self, a: Var, weights: Tensor<F>) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape(), weights.shape(), "dot_const shape");
        let s = t.data().iter().zip(weights.data()).map(|(&x, &w)| x * w).sum::<F>();
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::DotConst { a, weights }, ng)
    }

    /// Second largest singular value of `a` (0 when `a` has rank below 2 by shape).
    pub fn second_singular_value(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (value, uv) = second_singular(t);
        let ng = self.ng(a);
        self.push(Tensor::scalar(value), Op::SecondSingular { a, uv }, ng)
    }

    /// Gradients of the scalar `loss` with respect to every differentiable leaf.
    pub fn backward(&self, loss: Var) -> Gradients<F> {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<F>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(F::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, g, &mut grads);
        }
        let leaves = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match self.nodes[i].op {
                Op::Leaf if self.nodes[i].needs_grad => g,
                _ => None,
            })
            .collect();
        Gradients {
            grads: leaves,
            params: self.params.clone(),
        }
    }

    fn backprop_node(&self, i: usize, g_owned: Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let g = &g_owned;
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // C = op(A) op(B): dA = g op(B)^T, transposed back if ta.
                    let da = if *ta {
                        Tensor::matmul(bv, *tb, g, true)
                    } else {
                        Tensor::matmul(g, false, bv, !*tb)
                    };
                    accumulate(grads, *a, da);
                }
                if self.ng(*b) {
                    let db = if *tb {
                        Tensor::matmul(g, true, av, *ta)
                    } else {
                        Tensor::matmul(av, !*ta, g, false)
                    };
                    accumulate(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                if self.ng(*w) {
                    let dw = Tensor::matmul(self.value(*x), true, g, false);
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.ng(*b) {
                        accumulate(grads, *b, col_sums(g));
                    }
                }
                if self.ng(*x) {
                    let dx = Tensor::matmul(g, false, self.value(*w), true);
                    accumulate(grads, *x, dx);
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    accumulate(grads, *a, elementwise(g, self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    accumulate(grads, *b, elementwise(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.ng(*row) {
                    accumulate(grads, *row, col_sums(g));
                }
            }
            Op::MulRow(a, row) => {
                let rv = self.value(*row);
                if self.ng(*a) {
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        for (d, &s) in da.row_mut(r).iter_mut().zip(rv.data()) {
                            *d *= s;
                        }
                    }
                    accumulate(grads, *a, da);
                }
                if self.ng(*row) {
                    let prod = elementwise(g, self.value(*a), |x, y| x * y);
                    accumulate(grads, *row, col_sums(&prod));
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if self.ng(*a) {
                    let mut da = g.clone();
                    for (r, &s) in cv.data().iter().enumerate() {
                        da.row_mut(r).iter_mut().for_each(|d| *d *= s);
                    }
                    accumulate(grads, *a, da);
                }
                if self.ng(*col) {
                    let av = self.value(*a);
                    let dc: Vec<F> = (0..g.rows())
                        .map(|r| g.row(r).iter().zip(av.row(r)).map(|(&x, &y)| x * y).sum())
                        .collect();
                    accumulate(grads, *col, Tensor::column_vector(dc));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::Relu(a) => {
                let mut da = g_owned;
                for (d, &o) in da.data_mut().iter_mut().zip(y.data()) {
                    if o <= F::zero() {
                        *d = F::zero();
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                accumulate(grads, *a, elementwise(g, y, |d, o| d * o * (F::one() - o)));
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, elementwise(g, y, |d, o| d * (F::one() - o * o)));
            }
            Op::Log { a, floor } => {
                let floor = *floor;
                accumulate(
                    grads,
                    *a,
                    elementwise(g, self.value(*a), |d, x| if x > floor { d / x } else { F::zero() }),
                );
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Reshape(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, g.clone().reshaped(r, c));
            }
            Op::SliceCols { a, start } => {
                let (r, c) = self.shape(*a);
                let acc = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                for row in 0..r {
                    for (d, &x) in acc.row_mut(row)[*start..*start + g.cols()].iter_mut().zip(g.row(row)) {
                        *d += x;
                    }
                }
            }
            Op::SliceRows { a, start } => {
                let (r, c) = self.shape(*a);
                let acc = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                for (d, &x) in acc.data_mut()[start * c..(start + g.rows()) * c]
                    .iter_mut()
                    .zip(g.data())
                {
                    *d += x;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let mut dp = Tensor::zeros(r, c);
                        for row in 0..r {
                            dp.row_mut(row).copy_from_slice(&g.row(row)[off..off + c]);
                        }
                        accumulate(grads, p, dp);
                    }
                    off += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.ng(p) {
                        let dp = Tensor::from_vec(r, c, g.data()[off * c..(off + r) * c].to_vec());
                        accumulate(grads, p, dp);
                    }
                    off += r;
                }
            }
            Op::GatherRows { a, index } => {
                let (r, c) = self.shape(*a);
                let mut da = Tensor::zeros(r, c);
                for (i, &src) in index.iter().enumerate() {
                    for (d, &x) in da.row_mut(src).iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::SegmentMax { a, argmax } => {
                let (r, c) = self.shape(*a);
                let mut da = Tensor::zeros(r, c);
                for (k, (&src, &d)) in argmax.iter().zip(g.data()).enumerate() {
                    let col = k % c;
                    da.data_mut()[src * c + col] += d;
                }
                accumulate(grads, *a, da);
            }
            Op::NormalizeRows { a, eps, norms } => {
                let x = self.value(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                for (r, &n) in norms.iter().enumerate() {
                    let d = n + *eps;
                    let gr = g.row(r);
                    let xr = x.row(r);
                    let dot: F = gr.iter().zip(xr).map(|(&u, &v)| u * v).sum();
                    let coef = if n > F::zero() { dot / (d * d * n) } else { F::zero() };
                    for ((o, &gv), &xv) in da.row_mut(r).iter_mut().zip(gr).zip(xr) {
                        *o = gv / d - xv * coef;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Softmax { a, axis } => {
                let mut da = Tensor::zeros(y.rows(), y.cols());
                match axis {
                    Axis::Rows => {
                        for r in 0..y.rows() {
                            let (yr, gr) = (y.row(r), g.row(r));
                            let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                            for ((o, &p), &q) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                                *o = p * (q - dot);
                            }
                        }
                    }
                    Axis::Cols => {
                        for c in 0..y.cols() {
                            let dot: F = (0..y.rows()).map(|r| y.get(r, c) * g.get(r, c)).sum();
                            for r in 0..y.rows() {
                                da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogSoftmaxRows(a) => {
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gs: F = gr.iter().copied().sum();
                    for ((o, &ly), &q) in da.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = q - ly.exp() * gs;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let gv = self.value(*gamma).data();
                // Column sums of g, g * xhat in one pass.
                let mut sg = vec![F::zero(); c];
                let mut sgh = vec![F::zero(); c];
                for r in 0..n {
                    for (((a, b), &d), &h) in sg.iter_mut().zip(sgh.iter_mut()).zip(g.row(r)).zip(xhat.row(r)) {
                        *a += d;
                        *b += d * h;
                    }
                }
                if self.ng(*gamma) {
                    accumulate(grads, *gamma, Tensor::from_vec(1, c, sgh.clone()));
                }
                if self.ng(*beta) {
                    accumulate(grads, *beta, Tensor::from_vec(1, c, sg.clone()));
                }
                if self.ng(*x) {
                    let mut dx = g_owned;
                    match axis {
                        NormAxis::FixedCols => {
                            let k: Vec<F> = gv.iter().zip(inv_std).map(|(&a, &b)| a * b).collect();
                            for r in 0..n {
                                for (d, &s) in dx.row_mut(r).iter_mut().zip(&k) {
                                    *d *= s;
                                }
                            }
                        }
                        NormAxis::BatchCols => {
                            // dx = gamma * inv_std / n * (n g - sum g - xhat sum(g xhat))
                            let nf = F::from_usize(n).unwrap();
                            let k: Vec<F> = gv.iter().zip(inv_std).map(|(&a, &b)| a * b).collect();
                            let m1: Vec<F> = sg.iter().map(|&v| v / nf).collect();
                            let m2: Vec<F> = sgh.iter().map(|&v| v / nf).collect();
                            for r in 0..n {
                                let hr = xhat.row(r);
                                let dr = dx.row_mut(r);
                                for j in 0..c {
                                    dr[j] = k[j] * (dr[j] - m1[j] - hr[j] * m2[j]);
                                }
                            }
                        }
                        NormAxis::Rows => {
                            let cf = F::from_usize(c).unwrap();
                            for (r, &is) in inv_std.iter().enumerate() {
                                let hr = xhat.row(r);
                                let dr = dx.row_mut(r);
                                let mut s1 = F::zero();
                                let mut s2 = F::zero();
                                for j in 0..c {
                                    let d = dr[j] * gv[j];
                                    s1 += d;
                                    s2 += d * hr[j];
                                }
                                let (s1, s2) = (s1 / cf, s2 / cf);
                                for j in 0..c {
                                    dr[j] = is * (dr[j] * gv[j] - s1 - hr[j] * s2);
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::SumAll(a) => {
                let (r, c) = self.shape(*a);
                accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::DotConst { a, weights } => {
                let s = g.item();
                accumulate(grads, *a, weights.map(|w| w * s));
            }
            Op::SecondSingular { a, uv } => {
                let (r, c) = self.shape(*a);
                let da = match uv {
                    Some(uv) => uv.map(|x| x * g.item()),
                    None => Tensor::zeros(r, c),
                };
                accumulate(grads, *a, da);
            }
        }
    }
}

fn accumulate<F: Real>(grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
    match &mut grads[v.0] {
        Some(acc) => {
            debug_assert_eq!(acc.shape(), g.shape());
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn elementwise<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    Tensor::from_vec(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn col_sums<F: Real>(t: &Tensor<F>) -> Tensor<F> {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, &x) in out.data_mut().iter_mut().zip(t.row(r)) {
            *o += x;
        }
    }
    out
}

/// Numerically stable softmax along `axis`.
pub fn softmax<F: Real>(t: &Tensor<F>, axis: Axis) -> Tensor<F> {
    match axis {
        Axis::Rows => {
            let mut out = t.clone();
            for r in 0..out.rows() {
                softmax_in_place(out.row_mut(r));
            }
            out
        }
        Axis::Cols => {
            let mut tt = t.transpose();
            for r in 0..tt.rows() {
                softmax_in_place(tt.row_mut(r));
            }
            tt.transpose()
        }
    }
}

pub(crate) fn softmax_in_place<F: Real>(v: &mut [F]) {
    let m = v.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
    let mut s = F::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

fn second_singular<F: Real>(t: &Tensor<F>) -> (F, Option<Tensor<F>>) {
    let (r, c) = t.shape();
    if r < 2 || c < 2 {
        return (F::zero(), None);
    }
    let m = DMatrix::<f64>::from_row_iterator(r, c, t.to_f64_vec());
    let svd = m.svd(true, true);
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let k = order[1];
    let sigma = svd.singular_values[k];
    let (u, vt) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return (F::lit(sigma), None),
    };
    let mut uv = Tensor::zeros(r, c);
    for i in 0..r {
        for j in 0..c {
            uv.set(i, j, F::lit(u[(i, k)] * vt[(k, j)]));
        }
    }
    (F::lit(sigma), Some(uv))
}

/// Gradients of a scalar with respect to the differentiable leaves of a graph.
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
    params: Vec<(ParamId, Var)>,
}

impl<F: Real> Gradients<F> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Parameter gradients keyed by parameter id.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<F>)> + '_ {
        self.params.iter().filter_map(|&(id, v)| self.wrt(v).map(|g| (id, g)))
    }
}
