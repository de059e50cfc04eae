//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the tape in reverse and returns
//! the adjoint of every node that (transitively) depends on a parameter or on
//! an input created with `requires_grad`.

use alloc::vec;
use alloc::vec::Vec;

use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    AddRow(Var, Var),
    BroadcastRows(Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    OuterSum(Var, Var),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Sqrt(Var),
    Ln(Var),
    XLnX(Var),
    Clamp(Var, f64, f64),
    Reverse(Var, f64),
    BlockMatMul(Var, Var, usize, Trans),
    SharedLeftMatMul(Var, Var, usize),
    BlockOuterSum(Var, Var, usize),
    BlockSum(Var, usize),
    DivRows(Var, Var),
}

/// Which operand of a block product is transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    None,
    A,
    B,
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m[(0, 0)]
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose adjoint is recorded (used by gradient checks).
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Parameter leaf. Repeated requests for the same id return the same node,
    /// so its adjoint accumulates every use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_nodes.len() < store.len() {
            self.param_nodes.resize(store.len(), None);
        }
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param, true);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Ids of every parameter read during this pass.
    pub fn params_used(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.param_nodes.iter().enumerate().filter_map(|(i, v)| v.map(|_| ParamId(i)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// `scale·a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        let ng = self.ng(a);
        self.push(value, Op::Affine(a, scale), ng)
    }

    /// Adds a `1×k` row to every row of an `n×k` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a 1xk row");
        assert_eq!(xv.cols(), rv.cols(), "add_row width mismatch");
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(rv.as_slice()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(row);
        self.push(value, Op::AddRow(x, row), ng)
    }

    /// Repeats a `1×k` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Var {
        let rv = self.value(row);
        assert_eq!(rv.rows(), 1, "broadcast_rows expects a 1xk row");
        let value = Mat::from_fn(n, rv.cols(), |_, j| rv[(0, j)]);
        let ng = self.ng(row);
        self.push(value, Op::BroadcastRows(row), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let ng = self.ng(a);
        self.push(value, Op::LeakyRelu(a, slope), ng)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a), None);
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise softmax restricted to entries where `mask` is true; masked
    /// entries come out as exactly 0. Every row needs at least one open entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: &[bool]) -> Var {
        let value = softmax_rows(self.value(a), Some(mask));
        let ng = self.ng(a);
        // Masked outputs are 0, so the plain softmax adjoint already gives them
        // zero gradient.
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let width: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Mat::zeros(rows, width);
        let mut off = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for i in 0..rows {
                value.row_mut(i)[off..off + pv.cols()].copy_from_slice(pv.row(i));
            }
            off += pv.cols();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.as_slice());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let value = Mat::from_fn(av.rows(), len, |i, j| av[(i, start + j)]);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    /// `out[i][j] = s[i] + t[j]` for column vectors `s: n×1`, `t: m×1`.
    pub fn outer_sum(&mut self, s: Var, t: Var) -> Var {
        let (sv, tv) = (self.value(s), self.value(t));
        assert_eq!(sv.cols(), 1);
        assert_eq!(tv.cols(), 1);
        let value = Mat::from_fn(sv.rows(), tv.rows(), |i, j| sv[(i, 0)] + tv[(j, 0)]);
        let ng = self.ng(s) || self.ng(t);
        self.push(value, Op::OuterSum(s, t), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let value = Mat::scalar(av.sum() / av.len() as f64);
        let ng = self.ng(a);
        self.push(value, Op::Mean(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// Elementwise square root. The adjoint at 0 is taken as 0.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::sqrt);
        let ng = self.ng(a);
        self.push(value, Op::Sqrt(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.value(a).map(libm::log);
        let ng = self.ng(a);
        self.push(value, Op::Ln(a), ng)
    }

    /// `x·ln x` with the convention `0·ln 0 = 0`.
    pub fn x_ln_x(&mut self, a: Var) -> Var {
        let value = self.value(a).map(x_ln_x);
        let ng = self.ng(a);
        self.push(value, Op::XLnX(a), ng)
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    /// Gradient reversal: identity forward, adjoint multiplied by `-scale`.
    pub fn reverse_grad(&mut self, a: Var, scale: f64) -> Var {
        let value = self.value(a).clone();
        let ng = self.ng(a);
        self.push(value, Op::Reverse(a, scale), ng)
    }

    /// Per-block product of two row-stacked operands holding `blocks` equal
    /// blocks each: block `b` of the result is `op(A_b)·op(B_b)`.
    pub fn block_matmul(&mut self, a: Var, b: Var, blocks: usize, trans: Trans) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let parts: Vec<Mat> = (0..blocks)
            .map(|i| {
                let (x, y) = (row_block(av, blocks, i), row_block(bv, blocks, i));
                match trans {
                    Trans::None => x.matmul(&y),
                    Trans::A => x.t_matmul(&y),
                    Trans::B => x.matmul_t(&y),
                }
            })
            .collect();
        let value = stack_rows(&parts);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::BlockMatMul(a, b, blocks, trans), ng)
    }

    /// `S·X_b` for every block of the row-stacked `x`, with `S` shared.
    pub fn shared_left_matmul(&mut self, s: Var, x: Var, blocks: usize) -> Var {
        let (sv, xv) = (self.value(s), self.value(x));
        let parts: Vec<Mat> = (0..blocks).map(|i| sv.matmul(&row_block(xv, blocks, i))).collect();
        let value = stack_rows(&parts);
        let ng = self.ng(s) || self.ng(x);
        self.push(value, Op::SharedLeftMatMul(s, x, blocks), ng)
    }

    /// [`Tape::outer_sum`] within each of `blocks` row blocks: for block size
    /// `n`, `out[b·n + i][j] = s[b·n + i] + t[b·n + j]`.
    pub fn block_outer_sum(&mut self, s: Var, t: Var, blocks: usize) -> Var {
        let (sv, tv) = (self.value(s), self.value(t));
        assert_eq!(sv.cols(), 1);
        assert_eq!(tv.cols(), 1);
        assert_eq!(sv.rows(), tv.rows());
        let n = sv.rows() / blocks;
        let value = Mat::from_fn(sv.rows(), n, |r, j| sv[(r, 0)] + tv[((r / n) * n + j, 0)]);
        let ng = self.ng(s) || self.ng(t);
        self.push(value, Op::BlockOuterSum(s, t, blocks), ng)
    }

    /// Sum of each row block, as a `blocks×1` column.
    pub fn block_sum(&mut self, a: Var, blocks: usize) -> Var {
        let av = self.value(a);
        let sums: Vec<f64> = (0..blocks).map(|i| row_block(av, blocks, i).sum()).collect();
        let ng = self.ng(a);
        self.push(Mat::from_vec(blocks, 1, sums), Op::BlockSum(a, blocks), ng)
    }

    /// Divides row `i` of `x` by `c[i]`, for a column `c`.
    pub fn div_rows(&mut self, x: Var, c: Var) -> Var {
        let (xv, cv) = (self.value(x), self.value(c));
        assert_eq!(cv.shape(), (xv.rows(), 1), "divisor must be one column per row");
        let value = Mat::from_fn(xv.rows(), xv.cols(), |i, j| xv[(i, j)] / cv[(i, 0)]);
        let ng = self.ng(x) || self.ng(c);
        self.push(value, Op::DivRows(x, c), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// Reverse sweep from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    /// Gradients of every parameter read on this tape.
    pub fn param_grads(&self, grads: &Grads) -> Vec<(ParamId, Mat)> {
        self.param_nodes
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let val = self.value(v);
                    Mat::zeros(val.rows(), val.cols())
                });
                Some((ParamId(i), g))
            })
            .collect()
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let acc = |v: Var, d: Mat, grads: &mut [Option<Mat>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)), grads);
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g), grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y), grads);
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y), grads);
                }
            }
            Op::Affine(a, s) => acc(*a, g.map(|x| x * s), grads),
            Op::AddRow(x, row) => {
                acc(*x, g.clone(), grads);
                if self.ng(*row) {
                    acc(*row, Mat::row_vector(&g.col_sums()), grads);
                }
            }
            Op::BroadcastRows(row) => acc(*row, Mat::row_vector(&g.col_sums()), grads),
            Op::Transpose(a) => acc(*a, g.transpose(), grads),
            Op::Sigmoid(a) => acc(*a, g.zip_map(y, |g, y| g * y * (1.0 - y)), grads),
            Op::Tanh(a) => acc(*a, g.zip_map(y, |g, y| g * (1.0 - y * y)), grads),
            Op::Relu(a) => acc(*a, g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 }), grads),
            Op::LeakyRelu(a, slope) => {
                let s = *slope;
                acc(*a, g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { s * g }), grads)
            }
            Op::SoftmaxRows(a) => {
                let mut d = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for (o, (y, g)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = y * (g - dot);
                    }
                }
                acc(*a, d, grads);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.ng(*p) {
                        acc(*p, Mat::from_fn(g.rows(), w, |i, j| g[(i, off + j)]), grads);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let (r, c) = self.value(*p).shape();
                    if self.ng(*p) {
                        acc(*p, Mat::from_vec(r, c, g.as_slice()[off * c..(off + r) * c].to_vec()), grads);
                    }
                    off += r;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.value(*a).shape();
                let mut d = Mat::zeros(r, c);
                for i in 0..r {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                acc(*a, d, grads);
            }
            Op::OuterSum(s, t) => {
                if self.ng(*s) {
                    let rs = g.row_sums();
                    acc(*s, Mat::from_vec(rs.len(), 1, rs), grads);
                }
                if self.ng(*t) {
                    let cs = g.col_sums();
                    acc(*t, Mat::from_vec(cs.len(), 1, cs), grads);
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Mat::filled(r, c, g[(0, 0)]), grads);
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                acc(*a, Mat::filled(r, c, g[(0, 0)] / (r * c) as f64), grads);
            }
            Op::Square(a) => acc(*a, g.zip_map(self.value(*a), |g, x| 2.0 * x * g), grads),
            Op::Sqrt(a) => acc(*a, g.zip_map(y, |g, y| if y > 0.0 { 0.5 * g / y } else { 0.0 }), grads),
            Op::Ln(a) => acc(*a, g.zip_map(self.value(*a), |g, x| g / x), grads),
            Op::XLnX(a) => acc(
                *a,
                g.zip_map(self.value(*a), |g, x| g * (libm::log(x.max(f64::MIN_POSITIVE)) + 1.0)),
                grads,
            ),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*a, g.zip_map(self.value(*a), |g, x| if x >= lo && x <= hi { g } else { 0.0 }), grads)
            }
            Op::Reverse(a, s) => acc(*a, g.map(|x| -s * x), grads),
            Op::BlockMatMul(a, b, blocks, trans) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Vec::with_capacity(*blocks);
                let mut db = Vec::with_capacity(*blocks);
                for i in 0..*blocks {
                    let (x, y, gi) = (row_block(av, *blocks, i), row_block(bv, *blocks, i), row_block(g, *blocks, i));
                    let (dx, dy) = match trans {
                        Trans::None => (gi.matmul_t(&y), x.t_matmul(&gi)),
                        Trans::A => (y.matmul_t(&gi), x.matmul(&gi)),
                        Trans::B => (gi.matmul(&y), gi.t_matmul(&x)),
                    };
                    da.push(dx);
                    db.push(dy);
                }
                if self.ng(*a) {
                    acc(*a, stack_rows(&da), grads);
                }
                if self.ng(*b) {
                    acc(*b, stack_rows(&db), grads);
                }
            }
            Op::SharedLeftMatMul(s, x, blocks) => {
                let (sv, xv) = (self.value(*s), self.value(*x));
                if self.ng(*s) {
                    let mut ds = Mat::zeros(sv.rows(), sv.cols());
                    for i in 0..*blocks {
                        ds.add_assign(&row_block(g, *blocks, i).matmul_t(&row_block(xv, *blocks, i)));
                    }
                    acc(*s, ds, grads);
                }
                if self.ng(*x) {
                    let parts: Vec<Mat> = (0..*blocks).map(|i| sv.t_matmul(&row_block(g, *blocks, i))).collect();
                    acc(*x, stack_rows(&parts), grads);
                }
            }
            Op::BlockOuterSum(s, t, blocks) => {
                if self.ng(*s) {
                    let rs = g.row_sums();
                    acc(*s, Mat::from_vec(rs.len(), 1, rs), grads);
                }
                if self.ng(*t) {
                    let n = g.cols();
                    let mut dt = vec![0.0; g.rows()];
                    for b in 0..*blocks {
                        for i in 0..n {
                            for (j, v) in g.row(b * n + i).iter().enumerate() {
                                dt[b * n + j] += v;
                            }
                        }
                    }
                    acc(*t, Mat::from_vec(dt.len(), 1, dt), grads);
                }
            }
            Op::DivRows(x, c) => {
                let (xv, cv) = (self.value(*x), self.value(*c));
                if self.ng(*x) {
                    acc(*x, Mat::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] / cv[(i, 0)]), grads);
                }
                if self.ng(*c) {
                    let dc = (0..g.rows())
                        .map(|i| {
                            let dot: f64 = g.row(i).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum();
                            -dot / (cv[(i, 0)] * cv[(i, 0)])
                        })
                        .collect();
                    acc(*c, Mat::from_vec(g.rows(), 1, dc), grads);
                }
            }
            Op::BlockSum(a, blocks) => {
                let (r, c) = self.value(*a).shape();
                let n = r / blocks;
                acc(*a, Mat::from_fn(r, c, |i, _| g[(i / n, 0)]), grads);
            }
        }
    }
}

/// Rows of block `i` out of `blocks` equal row blocks.
pub fn row_block(m: &Mat, blocks: usize, i: usize) -> Mat {
    assert!(blocks > 0 && m.rows() % blocks == 0, "{} rows do not split into {blocks} blocks", m.rows());
    let n = m.rows() / blocks;
    let c = m.cols();
    Mat::from_vec(n, c, m.as_slice()[i * n * c..(i + 1) * n * c].to_vec())
}

/// Stacks equally wide matrices vertically.
pub fn stack_rows(parts: &[Mat]) -> Mat {
    let cols = parts[0].cols();
    let rows = parts.iter().map(|p| p.rows()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for p in parts {
        assert_eq!(p.cols(), cols, "stacked blocks differ in width");
        data.extend_from_slice(p.as_slice());
    }
    Mat::from_vec(rows, cols, data)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub fn x_ln_x(x: f64) -> f64 {
    if x > 0.0 {
        x * libm::log(x)
    } else {
        0.0
    }
}

pub fn softmax_rows(x: &Mat, mask: Option<&[bool]>) -> Mat {
    let mut out = Mat::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let open = |j: usize| mask.is_none_or(|m| m[i * x.cols() + j]);
        let row = x.row(i);
        let max = (0..x.cols()).filter(|&j| open(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        let mut z = 0.0;
        for j in 0..row.len() {
            if open(j) {
                o[j] = libm::exp(row[j] - max);
                z += o[j];
            }
        }
        for v in o.iter_mut() {
            *v /= z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_param_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", crate::params::ParamKind::Trainable, Mat::scalar(3.0));
        let mut tape = Tape::new();
        let a = tape.param(&store, w);
        let b = tape.param(&store, w);
        assert_eq!(a, b);
        let p = tape.mul(a, b);
        let loss = tape.sum(p);
        let grads = tape.backward(loss);
        let pg = tape.param_grads(&grads);
        assert_eq!(pg.len(), 1);
        assert_eq!(pg[0].1[(0, 0)], 6.0);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Mat::scalar(2.0));
        let x = tape.input(Mat::scalar(5.0));
        let y = tape.mul(c, x);
        let loss = tape.sum(y);
        let g = tape.backward(loss);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap()[(0, 0)], 2.0);
    }

    #[test]
    fn masked_softmax_zeroes_closed_entries() {
        let x = Mat::from_rows(&[&[1.0, 2.0, 3.0]]);
        let s = softmax_rows(&x, Some(&[true, false, true]));
        assert_eq!(s[(0, 1)], 0.0);
        assert!((s.sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reversal_negates() {
        let mut tape = Tape::new();
        let x = tape.input(Mat::from_rows(&[&[1.0, -2.0]]));
        let r = tape.reverse_grad(x, 1.0);
        assert_eq!(tape.value(r), tape.value(x));
        let loss = tape.sum(r);
        let g = tape.backward(loss);
        assert_eq!(g.get(x).unwrap().as_slice(), &[-1.0, -1.0]);
    }
}
