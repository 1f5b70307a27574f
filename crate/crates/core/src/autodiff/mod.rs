//! Minimal reverse-mode differentiation over 2-D `f64` arrays.
//!
//! A [`Tape`] records every primitive application in evaluation order. Each
//! node keeps its forward value plus whatever the backward rule needs, and
//! [`Tape::backward`] walks the record in reverse, accumulating gradients
//! additively so that fan-out is handled for free.
//!
//! Scalars are `1×1` arrays. Sparse operands (adjacency patterns, index
//! lists) are borrowed for the lifetime of the tape and never differentiated.

mod check;

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::SparseMatrix;

pub use check::{
    gradient_check, gradient_check_with_options, GradCheckOptions, GradCheckReport, DEFAULT_FLOOR,
};

/// Lower clamp applied to inputs of `log`.
pub const LOG_EPS: f64 = 1e-12;
/// Added to the column standard deviation in [`Tape::zscore_columns`].
pub const ZSCORE_EPS: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    /// Borrowed constant matrix on the left of a variable.
    ConstMatMul(&'g Array2<f64>, Var),
    /// `filter^steps · raw · weights` with both sparse factors borrowed.
    FilteredProjection {
        filter: &'g SparseMatrix,
        steps: usize,
        raw: &'g SparseMatrix,
        weights: Var,
    },
    SparseMatMul(&'g SparseMatrix, Var),
    /// Sparse matrix whose stored values are themselves a `nnz×1` variable.
    PatternMatMul {
        pattern: &'g SparseMatrix,
        values: Var,
        dense: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    RowSoftmax(Var),
    /// Softmax over each row segment of a sparse pattern, scores stored `nnz×1`.
    PatternSoftmax(&'g SparseMatrix, Var),
    ConcatColumns(Vec<Var>),
    SliceColumns(Var, usize),
    SliceRows(Var, usize),
    Transpose(Var),
    Sum(Var),
    TraceProduct(Var, Var),
    Dropout(Var, Array2<f64>),
    ZscoreColumns {
        input: Var,
        centered: Array2<f64>,
        std: Vec<f64>,
    },
    FrobeniusSq(Var),
    GatherRows(Var, &'g [usize]),
}

struct Node<'g> {
    value: Array2<f64>,
    requires_grad: bool,
    op: Op<'g>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when `var` does
    /// not require gradients or does not influence the loss.
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

fn same_shape(op: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn softmax_in_place(mut row: ndarray::ArrayViewMut1<'_, f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.mapv_inplace(|v| (v - max).exp());
    let total: f64 = row.sum();
    row.mapv_inplace(|v| v / total);
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, requires_grad: bool, op: Op<'g>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", va.dim(), vb.dim())));
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::MatMul(a, b)))
    }

    /// Constant dense matrix times a variable. The matrix is borrowed, so
    /// large inputs are never copied onto the tape.
    pub fn const_matmul(&mut self, a: &'g Array2<f64>, b: Var) -> Result<Var> {
        let vb = self.value(b);
        if a.ncols() != vb.nrows() {
            return Err(Error::shape(
                "const_matmul",
                format!("{:?} x {:?}", a.dim(), vb.dim()),
            ));
        }
        let out = a.dot(vb);
        let rg = self.rg(b);
        Ok(self.push(out, rg, Op::ConstMatMul(a, b)))
    }

    /// `filter^steps · raw · weights`, evaluated right to left so the dense
    /// product `filter^steps · raw` is never formed.
    pub fn filtered_projection(
        &mut self,
        filter: &'g SparseMatrix,
        steps: usize,
        raw: &'g SparseMatrix,
        weights: Var,
    ) -> Result<Var> {
        let (rows, cols) = filter.shape();
        if rows != cols || (steps > 0 && cols != raw.shape().0) {
            return Err(Error::shape(
                "filtered_projection",
                format!("filter {:?}, features {:?}", filter.shape(), raw.shape()),
            ));
        }
        let mut out = raw.mul_dense(self.value(weights).view())?;
        for _ in 0..steps {
            out = filter.mul_dense(out.view())?;
        }
        let rg = self.rg(weights);
        Ok(self.push(
            out,
            rg,
            Op::FilteredProjection {
                filter,
                steps,
                raw,
                weights,
            },
        ))
    }

    /// Constant sparse matrix times a dense variable.
    pub fn sparse_dense_matmul(&mut self, sparse: &'g SparseMatrix, dense: Var) -> Result<Var> {
        let out = sparse.mul_dense(self.value(dense).view())?;
        let rg = self.rg(dense);
        Ok(self.push(out, rg, Op::SparseMatMul(sparse, dense)))
    }

    /// `S · dense` where `S` has the sparsity of `pattern` and its stored
    /// entries, in storage order, are taken from the `nnz×1` variable `values`.
    pub fn pattern_matmul(&mut self, pattern: &'g SparseMatrix, values: Var, dense: Var) -> Result<Var> {
        let (vals, d) = (self.value(values), self.value(dense));
        if vals.dim() != (pattern.nnz(), 1) || d.nrows() != pattern.shape().1 {
            return Err(Error::shape(
                "pattern_matmul",
                format!(
                    "pattern {:?} with {} entries, values {:?}, dense {:?}",
                    pattern.shape(),
                    pattern.nnz(),
                    vals.dim(),
                    d.dim()
                ),
            ));
        }
        let weighted = pattern.with_values(vals.column(0).to_vec());
        let out = weighted.mul_dense(d.view())?;
        let rg = self.rg(values) || self.rg(dense);
        Ok(self.push(
            out,
            rg,
            Op::PatternMatMul {
                pattern,
                values,
                dense,
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("subtract", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("elementwise_multiply", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, rg, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a) * factor;
        let rg = self.rg(a);
        self.push(out, rg, Op::Scale(a, factor))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(out, rg, Op::Exp(a))
    }

    /// Natural log with inputs clamped below at [`LOG_EPS`].
    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| v.max(LOG_EPS).ln());
        let rg = self.rg(a);
        self.push(out, rg, Op::Log(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).mapv(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(out, rg, Op::LeakyRelu(a, slope))
    }

    /// ELU with unit scale.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(a);
        self.push(out, rg, Op::Elu(a))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for row in out.axis_iter_mut(Axis(0)) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(out, rg, Op::RowSoftmax(a))
    }

    /// Softmax over the stored entries of each row of `pattern`. Scores and
    /// output are `nnz×1` in storage order. Empty rows produce nothing.
    pub fn pattern_softmax(&mut self, pattern: &'g SparseMatrix, scores: Var) -> Result<Var> {
        if self.shape(scores) != (pattern.nnz(), 1) {
            return Err(Error::shape(
                "pattern_softmax",
                format!("{} entries vs scores {:?}", pattern.nnz(), self.shape(scores)),
            ));
        }
        let mut out = self.value(scores).clone();
        let indptr = pattern.indptr();
        for r in 0..pattern.shape().0 {
            if indptr[r + 1] > indptr[r] {
                softmax_in_place(out.slice_mut(s![indptr[r]..indptr[r + 1], 0]));
            }
        }
        let rg = self.rg(scores);
        Ok(self.push(out, rg, Op::PatternSoftmax(pattern, scores)))
    }

    pub fn concat_columns(&mut self, parts: &[Var]) -> Result<Var> {
        let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|&v| self.value(v).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape("concat_columns", e.to_string()))?;
        let rg = parts.iter().any(|&v| self.rg(v));
        Ok(self.push(out, rg, Op::ConcatColumns(parts.to_vec())))
    }

    pub fn slice_columns(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.shape(a).1 {
            return Err(Error::shape(
                "slice_columns",
                format!("{start}..{} of {:?}", start + len, self.shape(a)),
            ));
        }
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SliceColumns(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.shape(a).0 {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{} of {:?}", start + len, self.shape(a)),
            ));
        }
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::SliceRows(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, rg, Op::Transpose(a))
    }

    /// Sum of all entries, as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, rg, Op::Sum(a))
    }

    /// `tr(a · b)` without forming the product.
    pub fn trace_product(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != (vb.ncols(), vb.nrows()) {
            return Err(Error::shape(
                "trace_product",
                format!("{:?} and {:?}", va.dim(), vb.dim()),
            ));
        }
        let total = Zip::from(va).and(&vb.t()).fold(0.0, |acc, &x, &y| acc + x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array2::from_elem((1, 1), total), rg, Op::TraceProduct(a, b)))
    }

    /// Inverted dropout: zeroes each entry with probability `rate` and scales
    /// survivors by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask =
            Array2::from_shape_simple_fn(
                self.shape(a),
                || {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                },
            );
        let out = self.value(a) * &mask;
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::Dropout(a, mask)))
    }

    /// Column-wise z-score with population standard deviation; the
    /// denominator is `std + ZSCORE_EPS`, so constant columns map to zero.
    pub fn zscore_columns(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a);
        let n = value.nrows();
        if n == 0 {
            return Err(Error::shape("zscore_columns", "no rows"));
        }
        let mean = value.mean_axis(Axis(0)).expect("non-empty");
        let centered = value - &mean.view().insert_axis(Axis(0));
        let std: Vec<f64> = centered
            .axis_iter(Axis(1))
            .map(|c| (c.dot(&c) / n as f64).sqrt())
            .collect();
        let mut out = centered.clone();
        for (mut col, &sd) in out.axis_iter_mut(Axis(1)).zip(&std) {
            col.mapv_inplace(|v| v / (sd + ZSCORE_EPS));
        }
        let rg = self.rg(a);
        Ok(self.push(
            out,
            rg,
            Op::ZscoreColumns {
                input: a,
                centered,
                std,
            },
        ))
    }

    /// Squared Frobenius norm as a `1×1` node.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Array2::from_elem((1, 1), v.iter().map(|x| x * x).sum());
        let rg = self.rg(a);
        self.push(out, rg, Op::FrobeniusSq(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &'g [usize]) -> Result<Var> {
        let value = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= value.nrows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {:?}", value.dim()),
            ));
        }
        let cols = value.ncols();
        let mut out = Array2::zeros((idx.len(), cols));
        for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
            row.assign(&value.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(out, rg, Op::GatherRows(a, idx)))
    }

    /// Reverse pass from a `1×1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<'g>, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let mut acc = |v: Var, delta: Array2<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::ConstMatMul(a, b) => acc(*b, a.t().dot(g)),
            Op::FilteredProjection {
                filter,
                steps,
                raw,
                weights,
            } => {
                let mut back = g.clone();
                for _ in 0..*steps {
                    let mut next = Array2::zeros(back.dim());
                    filter.transpose_mul_dense_into(back.view(), next.view_mut());
                    back = next;
                }
                let mut d = Array2::zeros(val(*weights).dim());
                raw.transpose_mul_dense_into(back.view(), d.view_mut());
                acc(*weights, d);
            }
            Op::SparseMatMul(sparse, dense) => {
                let mut d = Array2::zeros(val(*dense).dim());
                sparse.transpose_mul_dense_into(g.view(), d.view_mut());
                acc(*dense, d);
            }
            Op::PatternMatMul {
                pattern,
                values,
                dense,
            } => {
                let b = val(*dense);
                if self.rg(*values) {
                    let mut gv = Array2::zeros((pattern.nnz(), 1));
                    let indptr = pattern.indptr();
                    for r in 0..pattern.shape().0 {
                        let g_row = g.row(r);
                        for e in indptr[r]..indptr[r + 1] {
                            gv[[e, 0]] = g_row.dot(&b.row(pattern.indices()[e]));
                        }
                    }
                    acc(*values, gv);
                }
                if self.rg(*dense) {
                    let weighted = pattern.with_values(val(*values).column(0).to_vec());
                    let mut d = Array2::zeros(b.dim());
                    weighted.transpose_mul_dense_into(g.view(), d.view_mut());
                    acc(*dense, d);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * val(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::Scale(a, f) => acc(*a, g * *f),
            Op::Exp(a) => acc(*a, g * &node.value),
            Op::Log(a) => {
                let d = Zip::from(g)
                    .and(val(*a))
                    .map_collect(|&gi, &x| if x > LOG_EPS { gi / x } else { 0.0 });
                acc(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = Zip::from(g)
                    .and(val(*a))
                    .map_collect(|&gi, &x| if x > 0.0 { gi } else { gi * slope });
                acc(*a, d);
            }
            Op::Elu(a) => {
                let d = Zip::from(g)
                    .and(val(*a))
                    .and(&node.value)
                    .map_collect(|&gi, &x, &y| if x > 0.0 { gi } else { gi * (y + 1.0) });
                acc(*a, d);
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let mut d = g * y;
                for (mut d_row, y_row) in d.axis_iter_mut(Axis(0)).zip(y.axis_iter(Axis(0))) {
                    let dot = d_row.sum();
                    d_row.scaled_add(-dot, &y_row);
                }
                acc(*a, d);
            }
            Op::PatternSoftmax(pattern, scores) => {
                let y = &node.value;
                let mut d = g * y;
                let indptr = pattern.indptr();
                for r in 0..pattern.shape().0 {
                    let span = indptr[r]..indptr[r + 1];
                    let dot: f64 = d.slice(s![span.clone(), 0]).sum();
                    for e in span {
                        d[[e, 0]] -= dot * y[[e, 0]];
                    }
                }
                acc(*scores, d);
            }
            Op::ConcatColumns(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = val(p).ncols();
                    acc(p, g.slice(s![.., start..start + width]).to_owned());
                    start += width;
                }
            }
            Op::SliceColumns(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                acc(*a, d);
            }
            Op::SliceRows(a, start) => {
                let mut d = Array2::zeros(val(*a).dim());
                d.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::TraceProduct(a, b) => {
                let s = g[[0, 0]];
                if self.rg(*a) {
                    acc(*a, val(*b).t().to_owned() * s);
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t().to_owned() * s);
                }
            }
            Op::Dropout(a, mask) => acc(*a, g * mask),
            Op::ZscoreColumns { input, centered, std } => {
                let n = centered.nrows() as f64;
                let mut d = Array2::zeros(centered.dim());
                for (j, &sd) in std.iter().enumerate() {
                    let denom = sd + ZSCORE_EPS;
                    let gc = g.column(j);
                    let c = centered.column(j);
                    let g_mean = gc.mean().unwrap_or(0.0);
                    let gc_dot = gc.dot(&c);
                    let coupling = if sd > 0.0 {
                        gc_dot / (denom * denom * n * sd)
                    } else {
                        0.0
                    };
                    let mut dj = d.column_mut(j);
                    for i in 0..c.len() {
                        dj[i] = (gc[i] - g_mean) / denom - coupling * c[i];
                    }
                }
                acc(*input, d);
            }
            Op::FrobeniusSq(a) => acc(*a, val(*a) * (2.0 * g[[0, 0]])),
            Op::GatherRows(a, idx) => {
                let mut d = Array2::zeros(val(*a).dim());
                for (k, &i) in idx.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(k);
                }
                acc(*a, d);
            }
        }
    }
}
