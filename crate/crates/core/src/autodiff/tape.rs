//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive applied during one forward pass. Each
//! primitive stores what its vector-Jacobian product needs; [`Tape::backward`]
//! walks the records in reverse. Values are checked for NaN/Inf as they are
//! produced, so a blow-up is reported at the primitive that caused it.
//!
//! Conventions that gradient checks rely on: the ReLU derivative at 0 is 0,
//! and row/neighbourhood max and min send the gradient to the lowest index
//! among ties.

use std::ops::Range;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, Axis, Zip};

use crate::autodiff::param::{ParamId, ParamStore};
use crate::autodiff::AutodiffError;
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const NO_ARG: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Max,
    Min,
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix<T>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    ScaleByVar(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Arc<Array2<T>>),
    RowScale(Var, Arc<Vec<T>>),
    ConcatCols(Vec<Var>),
    Relu(Var),
    Prelu(Var, Var),
    Tanh(Var),
    Sqrt(Var),
    RowSum(Var),
    RowMean(Var),
    RowExtreme(Var, Vec<usize>),
    RowL2Normalize { x: Var, norms: Vec<T>, eps: T },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<T>, inv_std: Array1<T>, train: bool },
    MeanRows(Var),
    SegmentMean(Var, Arc<Vec<Range<usize>>>),
    NeighborExtreme(Var, Array2<usize>),
    GatherRows(Var, Arc<Vec<usize>>),
    Sum(Var),
    CrossEntropy { logits: Var, labels: Arc<Vec<usize>>, probs: Array2<T> },
    Mae { pred: Var, target: Arc<Array2<T>> },
}

struct Node<T> {
    value: Arc<Array2<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

/// Batch statistics computed by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Array1<T>,
    /// Biased (population) variance.
    pub var: Array1<T>,
    pub rows: usize,
}

type Res = Result<Var, AutodiffError>;

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::Shape { op, left: a, right: b }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn value_shared(&self, v: Var) -> Arc<Array2<T>> {
        Arc::clone(&self.nodes[v.0].value)
    }

    /// Whether any parameter feeds into `v`.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1×1` tensor.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Array2<T>, op: Op<T>, needs_grad: bool) -> Res {
        self.push_shared(op_name, Arc::new(value), op, needs_grad)
    }

    fn push_shared(&mut self, op_name: &'static str, value: Arc<Array2<T>>, op: Op<T>, needs_grad: bool) -> Res {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite(op_name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant leaf (no gradient).
    pub fn constant(&mut self, value: Array2<T>) -> Res {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Constant leaf sharing its storage with the caller.
    pub fn constant_shared(&mut self, value: Arc<Array2<T>>) -> Res {
        self.push_shared("constant", value, Op::Leaf, false)
    }

    /// Free leaf that receives a gradient.
    pub fn input(&mut self, value: Array2<T>) -> Res {
        self.push("input", value, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; the value read is `M ⊙ W`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Res {
        self.push("param", store.get(id).effective_value(), Op::Param(id), true)
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_err("matmul", sa, sb));
        }
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push("matmul", value, Op::MatMul(a, b), ng)
    }

    /// Sparse (constant) times dense.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix<T>>, b: Var) -> Res {
        let sb = self.shape(b);
        if s.ncols() != sb.0 {
            return Err(shape_err("spmm", s.shape(), sb));
        }
        let value = s.matmul_dense(self.value(b).view());
        let ng = self.needs(b);
        self.push("spmm", value, Op::SpMM(Arc::clone(s), b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", sa, sb));
        }
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push("add", value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("sub", sa, sb));
        }
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push("sub", value, Op::Sub(a, b), ng)
    }

    /// Adds a `1×c` row vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Res {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(shape_err("add_row", sa, sr));
        }
        let value = self.value(a) + self.value(row);
        let ng = self.needs(a) || self.needs(row);
        self.push("add_row", value, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Res {
        let value = self.value(a) * c;
        let ng = self.needs(a);
        self.push("scale", value, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Res {
        let value = self.value(a) + c;
        let ng = self.needs(a);
        self.push("add_scalar", value, Op::AddScalar(a), ng)
    }

    /// Multiplies every entry by the `1×1` tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Res {
        if self.shape(s) != (1, 1) {
            return Err(shape_err("scale_by", self.shape(a), self.shape(s)));
        }
        let value = self.value(a) * self.scalar(s);
        let ng = self.needs(a) || self.needs(s);
        self.push("scale_by", value, Op::ScaleByVar(a, s), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mul", sa, sb));
        }
        let value = self.value(a) * self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push("mul", value, Op::Mul(a, b), ng)
    }

    /// Elementwise product with a constant matrix (dropout, masks).
    pub fn mul_const(&mut self, a: Var, m: Arc<Array2<T>>) -> Res {
        let sa = self.shape(a);
        if sa != m.dim() {
            return Err(shape_err("mul_const", sa, m.dim()));
        }
        let value = self.value(a) * &*m;
        let ng = self.needs(a);
        self.push("mul_const", value, Op::MulConst(a, m), ng)
    }

    /// Multiplies row `i` by the constant `factors[i]`.
    pub fn row_scale(&mut self, a: Var, factors: Arc<Vec<T>>) -> Res {
        let sa = self.shape(a);
        if factors.len() != sa.0 {
            return Err(shape_err("row_scale", sa, (factors.len(), 1)));
        }
        let mut value = self.value(a).clone();
        for (mut row, &f) in value.rows_mut().into_iter().zip(factors.iter()) {
            row *= f;
        }
        let ng = self.needs(a);
        self.push("row_scale", value, Op::RowScale(a, factors), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Res {
        let rows = parts.first().map(|&p| self.shape(p).0).unwrap_or(0);
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_err("concat_cols", (rows, 0), self.shape(p)));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).map_err(|_| AutodiffError::Shape {
            op: "concat_cols",
            left: (rows, 0),
            right: (0, 0),
        })?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn relu(&mut self, a: Var) -> Res {
        let value = self.value(a).mapv(|v| if v > T::zero() { v } else { T::zero() });
        let ng = self.needs(a);
        self.push("relu", value, Op::Relu(a), ng)
    }

    /// `max(0, x) + slope · min(0, x)` with a learnable `1×1` slope.
    pub fn prelu(&mut self, a: Var, slope: Var) -> Res {
        if self.shape(slope) != (1, 1) {
            return Err(shape_err("prelu", self.shape(a), self.shape(slope)));
        }
        let k = self.scalar(slope);
        let value = self.value(a).mapv(|v| if v > T::zero() { v } else { k * v });
        let ng = self.needs(a) || self.needs(slope);
        self.push("prelu", value, Op::Prelu(a, slope), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Res {
        let value = self.value(a).mapv(T::tanh);
        let ng = self.needs(a);
        self.push("tanh", value, Op::Tanh(a), ng)
    }

    pub fn sqrt(&mut self, a: Var) -> Res {
        let value = self.value(a).mapv(T::sqrt);
        let ng = self.needs(a);
        self.push("sqrt", value, Op::Sqrt(a), ng)
    }

    /// `n×c → n×1`.
    pub fn row_sum(&mut self, a: Var) -> Res {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push("row_sum", value, Op::RowSum(a), ng)
    }

    /// `n×c → n×1`.
    pub fn row_mean(&mut self, a: Var) -> Res {
        let c = self.shape(a).1;
        if c == 0 {
            return Err(AutodiffError::Empty("row_mean"));
        }
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1)) / T::of_usize(c);
        let ng = self.needs(a);
        self.push("row_mean", value, Op::RowMean(a), ng)
    }

    /// Row-wise max (or min) to `n×1`; returns the value and the arg index per row.
    pub fn row_extreme(&mut self, a: Var, which: Extreme) -> Result<(Var, Vec<usize>), AutodiffError> {
        let (n, c) = self.shape(a);
        if c == 0 {
            return Err(AutodiffError::Empty("row_extreme"));
        }
        let x = self.value(a);
        let mut args = Vec::with_capacity(n);
        let mut value = Array2::zeros((n, 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut best = 0;
            for j in 1..c {
                let better = match which {
                    Extreme::Max => row[j] > row[best],
                    Extreme::Min => row[j] < row[best],
                };
                if better {
                    best = j;
                }
            }
            args.push(best);
            value[[i, 0]] = row[best];
        }
        let ng = self.needs(a);
        let v = self.push("row_extreme", value, Op::RowExtreme(a, args.clone()), ng)?;
        Ok((v, args))
    }

    /// `x / max(‖x‖₂, eps)` per row.
    pub fn row_l2_normalize(&mut self, a: Var, eps: T) -> Res {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(norm);
            let denom = norm.max(eps);
            row.mapv_inplace(|v| v / denom);
        }
        let ng = self.needs(a);
        self.push("row_l2_normalize", value, Op::RowL2Normalize { x: a, norms, eps }, ng)
    }

    /// Training-mode batch norm over rows with batch statistics; `gamma` and
    /// `beta` are `1×c`.
    pub fn batch_norm_train(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>), AutodiffError> {
        let (n, c) = self.shape(a);
        if n == 0 {
            return Err(AutodiffError::Empty("batch_norm"));
        }
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return Err(shape_err("batch_norm", (n, c), self.shape(gamma)));
        }
        let x = self.value(a);
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty");
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(a) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            "batch_norm",
            value,
            Op::BatchNorm { x: a, gamma, beta, xhat, inv_std, train: true },
            ng,
        )?;
        Ok((v, BatchStats { mean, var, rows: n }))
    }

    /// Eval-mode batch norm: a fixed affine map from running statistics.
    pub fn batch_norm_eval(
        &mut self,
        a: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Array1<T>,
        running_var: &Array1<T>,
        eps: T,
    ) -> Res {
        let (n, c) = self.shape(a);
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) || running_mean.len() != c {
            return Err(shape_err("batch_norm", (n, c), self.shape(gamma)));
        }
        let inv_std = running_var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (self.value(a) - running_mean) * &inv_std;
        let value = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.needs(a) || self.needs(gamma) || self.needs(beta);
        self.push(
            "batch_norm",
            value,
            Op::BatchNorm { x: a, gamma, beta, xhat, inv_std, train: false },
            ng,
        )
    }

    /// `n×c → 1×c` column means.
    pub fn mean_rows(&mut self, a: Var) -> Res {
        let value = self
            .value(a)
            .mean_axis(Axis(0))
            .ok_or(AutodiffError::Empty("mean_rows"))?
            .insert_axis(Axis(0));
        let ng = self.needs(a);
        self.push("mean_rows", value, Op::MeanRows(a), ng)
    }

    /// Mean over each row range, giving one output row per range.
    pub fn segment_mean(&mut self, a: Var, ranges: Arc<Vec<Range<usize>>>) -> Res {
        let (n, c) = self.shape(a);
        let x = self.value(a);
        let mut value = Array2::zeros((ranges.len(), c));
        for (g, r) in ranges.iter().enumerate() {
            if r.is_empty() || r.end > n {
                return Err(AutodiffError::Empty("segment_mean"));
            }
            let m = x.slice(s![r.clone(), ..]).mean_axis(Axis(0)).expect("nonempty");
            value.row_mut(g).assign(&m);
        }
        let ng = self.needs(a);
        self.push("segment_mean", value, Op::SegmentMean(a, ranges), ng)
    }

    /// Elementwise max (or min) of `x` over each node's neighbours in
    /// `adjacency` (only its sparsity pattern is used). Empty neighbourhoods
    /// give zero rows.
    pub fn neighbor_extreme(&mut self, adjacency: &SparseMatrix<T>, a: Var, which: Extreme) -> Res {
        let (n, c) = self.shape(a);
        if adjacency.ncols() != n {
            return Err(shape_err("neighbor_extreme", adjacency.shape(), (n, c)));
        }
        let x = self.value(a);
        let rows = adjacency.nrows();
        let mut value = Array2::zeros((rows, c));
        let mut args = Array2::from_elem((rows, c), NO_ARG);
        for i in 0..rows {
            let (nbrs, _) = adjacency.row(i);
            if nbrs.is_empty() {
                continue;
            }
            for f in 0..c {
                let mut best = nbrs[0];
                for &j in &nbrs[1..] {
                    let better = match which {
                        Extreme::Max => x[[j, f]] > x[[best, f]],
                        Extreme::Min => x[[j, f]] < x[[best, f]],
                    };
                    if better || (x[[j, f]] == x[[best, f]] && j < best) {
                        best = j;
                    }
                }
                value[[i, f]] = x[[best, f]];
                args[[i, f]] = best;
            }
        }
        let ng = self.needs(a);
        self.push("neighbor_extreme", value, Op::NeighborExtreme(a, args), ng)
    }

    pub fn gather_rows(&mut self, a: Var, rows: Arc<Vec<usize>>) -> Res {
        let n = self.shape(a).0;
        if rows.iter().any(|&r| r >= n) {
            return Err(AutodiffError::Index { op: "gather_rows", index: n });
        }
        let value = self.value(a).select(Axis(0), &rows);
        let ng = self.needs(a);
        self.push("gather_rows", value, Op::GatherRows(a, rows), ng)
    }

    /// Sum of all entries as `1×1`.
    pub fn sum(&mut self, a: Var) -> Res {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push("sum", value, Op::Sum(a), ng)
    }

    /// Mean softmax cross-entropy over rows, computed with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: Arc<Vec<usize>>) -> Res {
        let (n, k) = self.shape(logits);
        if labels.len() != n || n == 0 {
            return Err(shape_err("cross_entropy", (n, k), (labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(AutodiffError::Label { label: bad, classes: k });
        }
        let x = self.value(logits);
        let mut probs = Array2::zeros((n, k));
        let mut total = T::zero();
        for (i, row) in x.rows().into_iter().enumerate() {
            let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
            let sum_exp: T = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            total += lse - row[labels[i]];
            for j in 0..k {
                probs[[i, j]] = (row[j] - lse).exp();
            }
        }
        let value = Array2::from_elem((1, 1), total / T::of_usize(n));
        let ng = self.needs(logits);
        self.push("cross_entropy", value, Op::CrossEntropy { logits, labels, probs }, ng)
    }

    /// Mean absolute error against a constant target of the same shape.
    pub fn mae(&mut self, pred: Var, target: Arc<Array2<T>>) -> Res {
        let sp = self.shape(pred);
        if sp != target.dim() || sp.0 * sp.1 == 0 {
            return Err(shape_err("mae", sp, target.dim()));
        }
        let total: T = Zip::from(self.value(pred))
            .and(&*target)
            .fold(T::zero(), |acc, &p, &t| acc + (p - t).abs());
        let value = Array2::from_elem((1, 1), total / T::of_usize(sp.0 * sp.1));
        let ng = self.needs(pred);
        self.push("mae", value, Op::Mae { pred, target }, ng)
    }

    /// Reverse pass from a `1×1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::NotScalar(self.shape(loss)));
        }
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, out: &Array2<T>, g: &Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let mut acc = |v: Var, delta: Array2<T>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &delta,
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.needs(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::SpMM(s, b) => acc(*b, s.transpose_matmul_dense(g.view())),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.mapv(|v| -v));
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::ScaleByVar(a, s) => {
                let k = self.scalar(*s);
                acc(*a, g * k);
                let ds = Zip::from(g).and(self.value(*a)).fold(T::zero(), |acc, &gi, &ai| acc + gi * ai);
                acc(*s, Array2::from_elem((1, 1), ds));
            }
            Op::Mul(a, b) => {
                acc(*a, g * self.value(*b));
                acc(*b, g * self.value(*a));
            }
            Op::MulConst(a, m) => acc(*a, g * &**m),
            Op::RowScale(a, f) => {
                let mut d = g.clone();
                for (mut row, &k) in d.rows_mut().into_iter().zip(f.iter()) {
                    row *= k;
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    acc(p, g.slice(s![.., start..start + w]).to_owned());
                    start += w;
                }
            }
            Op::Relu(a) => {
                let d = Zip::from(g).and(self.value(*a)).map_collect(|&gi, &x| if x > T::zero() { gi } else { T::zero() });
                acc(*a, d);
            }
            Op::Prelu(a, slope) => {
                let k = self.scalar(*slope);
                let x = self.value(*a);
                let d = Zip::from(g).and(x).map_collect(|&gi, &xi| if xi > T::zero() { gi } else { k * gi });
                acc(*a, d);
                let ds = Zip::from(g).and(x).fold(T::zero(), |s, &gi, &xi| if xi > T::zero() { s } else { s + gi * xi });
                acc(*slope, Array2::from_elem((1, 1), ds));
            }
            Op::Tanh(a) => {
                let d = Zip::from(g).and(out).map_collect(|&gi, &y| gi * (T::one() - y * y));
                acc(*a, d);
            }
            Op::Sqrt(a) => {
                let two = T::of(2.0);
                let d = Zip::from(g).and(out).map_collect(|&gi, &y| gi / (two * y));
                acc(*a, d);
            }
            Op::RowSum(a) => {
                let c = self.shape(*a).1;
                acc(*a, broadcast_col(g, c));
            }
            Op::RowMean(a) => {
                let c = self.shape(*a).1;
                acc(*a, broadcast_col(g, c) / T::of_usize(c));
            }
            Op::RowExtreme(a, args) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (i, &j) in args.iter().enumerate() {
                    d[[i, j]] = g[[i, 0]];
                }
                acc(*a, d);
            }
            Op::RowL2Normalize { x, norms, eps } => {
                let mut d = g.clone();
                for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                    let y = out.row(i);
                    if norms[i] > *eps {
                        let dot: T = row.iter().zip(y.iter()).map(|(&gi, &yi)| gi * yi).sum();
                        let n = norms[i];
                        Zip::from(&mut row).and(&y).for_each(|gi, &yi| *gi = (*gi - yi * dot) / n);
                    } else {
                        row.mapv_inplace(|gi| gi / *eps);
                    }
                }
                acc(*x, d);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let gam = self.value(*gamma).row(0).to_owned();
                acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                if self.needs(*x) {
                    let gxhat = g * &gam;
                    let d = if *train {
                        let mean_g = gxhat.mean_axis(Axis(0)).expect("nonempty");
                        let mean_gx = (&gxhat * xhat).mean_axis(Axis(0)).expect("nonempty");
                        (gxhat - &mean_g - xhat * &mean_gx) * inv_std
                    } else {
                        gxhat * inv_std
                    };
                    acc(*x, d);
                }
            }
            Op::MeanRows(a) => {
                let n = self.shape(*a).0;
                let row = g.row(0).to_owned() / T::of_usize(n);
                acc(*a, broadcast_row(&row, n));
            }
            Op::SegmentMean(a, ranges) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, r) in ranges.iter().enumerate() {
                    let row = g.row(k).to_owned() / T::of_usize(r.len());
                    for i in r.clone() {
                        d.row_mut(i).assign(&row);
                    }
                }
                acc(*a, d);
            }
            Op::NeighborExtreme(a, args) => {
                let mut d = Array2::zeros(self.shape(*a));
                for ((i, f), &j) in args.indexed_iter() {
                    if j != NO_ARG {
                        d[[j, f]] += g[[i, f]];
                    }
                }
                acc(*a, d);
            }
            Op::GatherRows(a, rows) => {
                let mut d = Array2::zeros(self.shape(*a));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    dst += &g.row(k);
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, Array2::from_elem(self.shape(*a), g[[0, 0]])),
            Op::CrossEntropy { logits, labels, probs } => {
                let n = T::of_usize(labels.len());
                let mut d = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    d[[i, y]] -= T::one();
                }
                acc(*logits, d * (g[[0, 0]] / n));
            }
            Op::Mae { pred, target } => {
                let n = T::of_usize(target.len());
                let scale = g[[0, 0]] / n;
                let d = Zip::from(self.value(*pred)).and(&**target).map_collect(|&p, &t| {
                    if p > t {
                        scale
                    } else if p < t {
                        -scale
                    } else {
                        T::zero()
                    }
                });
                acc(*pred, d);
            }
        }
    }
}

fn broadcast_col<T: Scalar>(g: &Array2<T>, cols: usize) -> Array2<T> {
    Array2::from_shape_fn((g.nrows(), cols), |(i, _)| g[[i, 0]])
}

fn broadcast_row<T: Scalar>(row: &Array1<T>, rows: usize) -> Array2<T> {
    Array2::from_shape_fn((rows, row.len()), |(_, j)| row[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn relu_forward_and_subgradient() {
        let mut t = Tape::<f64>::new();
        let x = t.input(array![[-1.0, 0.0, 2.0]]).unwrap();
        let y = t.relu(x).unwrap();
        assert_eq!(t.value(y), &array![[0.0, 0.0, 2.0]]);
        let l = t.sum(y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &array![[0.0, 0.0, 1.0]]);
    }

    #[test]
    fn prelu_slope_one_is_identity() {
        let mut t = Tape::<f64>::new();
        let x = t.input(array![[-3.0, 0.5]]).unwrap();
        let k = t.input(array![[1.0]]).unwrap();
        let y = t.prelu(x, k).unwrap();
        assert_eq!(t.value(y), t.value(x));
    }

    #[test]
    fn spmm_on_normalised_p2() {
        let a = SparseMatrix::from_dense(array![[0.5, 0.5], [0.5, 0.5]].view());
        let mut t = Tape::<f64>::new();
        let x = t.constant(array![[1.0], [3.0]]).unwrap();
        let y = t.spmm(&Arc::new(a), x).unwrap();
        assert_eq!(t.value(y), &array![[2.0], [2.0]]);
    }

    #[test]
    fn cross_entropy_values() {
        let mut t = Tape::<f64>::new();
        let x = t.input(Array2::zeros((3, 4))).unwrap();
        let l = t.cross_entropy(x, Arc::new(vec![0, 1, 3])).unwrap();
        assert!((t.scalar(l) - 4f64.ln()).abs() < 1e-15);

        let x = t.input(array![[10.0, 0.0]]).unwrap();
        let l = t.cross_entropy(x, Arc::new(vec![0])).unwrap();
        assert!((t.scalar(l) - (1.0 + (-10f64).exp()).ln()).abs() < 1e-15);

        assert_eq!(
            t.cross_entropy(x, Arc::new(vec![2])),
            Err(AutodiffError::Label { label: 2, classes: 2 })
        );
    }

    #[test]
    fn mae_of_exact_prediction_is_zero() {
        let mut t = Tape::<f64>::new();
        let target = array![[1.0], [2.5]];
        let p = t.input(target.clone()).unwrap();
        let l = t.mae(p, Arc::new(target.clone())).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let p = t.input(&target + 1.0).unwrap();
        let l = t.mae(p, Arc::new(target)).unwrap();
        assert_eq!(t.scalar(l), 1.0);
    }

    #[test]
    fn non_finite_is_reported_with_primitive_name() {
        let mut t = Tape::<f64>::new();
        let x = t.input(array![[-1.0]]).unwrap();
        assert_eq!(t.sqrt(x), Err(AutodiffError::NonFinite("sqrt")));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut t = Tape::<f64>::new();
        let a = t.input(Array2::zeros((2, 3))).unwrap();
        let b = t.input(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(t.matmul(a, b), Err(AutodiffError::Shape { op: "matmul", .. })));
    }

    #[test]
    fn disconnected_input_gets_no_gradient() {
        let mut t = Tape::<f64>::new();
        let a = t.input(array![[1.0]]).unwrap();
        let b = t.input(array![[2.0]]).unwrap();
        let l = t.sum(a).unwrap();
        let g = t.backward(l).unwrap();
        assert!(g.wrt(b).is_none());
    }

    #[test]
    fn batch_norm_train_standardises() {
        let mut t = Tape::<f64>::new();
        let x = t.input(array![[1.0, 10.0], [2.0, -4.0], [6.0, 3.0], [-1.0, 0.5]]).unwrap();
        let gamma = t.input(array![[1.0, 1.0]]).unwrap();
        let beta = t.input(array![[0.0, 0.0]]).unwrap();
        let (y, stats) = t.batch_norm_train(x, gamma, beta, 0.0).unwrap();
        let y = t.value(y);
        for col in y.columns() {
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        assert_eq!(stats.rows, 4);
    }

    #[test]
    fn max_ties_go_to_lowest_index() {
        let mut t = Tape::<f64>::new();
        let x = t.input(array![[2.0, 2.0, 1.0]]).unwrap();
        let (m, args) = t.row_extreme(x, Extreme::Max).unwrap();
        assert_eq!(args, vec![0]);
        let l = t.sum(m).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &array![[1.0, 0.0, 0.0]]);
    }
}
