//! Compressed sparse row matrices.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("row offsets must start at 0, be nondecreasing and end at nnz")]
    BadOffsets,
    #[error("row {row}: column indices must be strictly increasing and < {ncols}")]
    BadColumns { row: usize, ncols: usize },
    #[error("row {row}, column {col}: value is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("array lengths disagree: {0}")]
    Length(&'static str),
}

/// CSR matrix: row offsets, strictly increasing column indices per row,
/// finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn new(
        nrows: usize,
        ncols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self, SparseError> {
        if row_offsets.len() != nrows + 1 {
            return Err(SparseError::Length("row_offsets must have nrows + 1 entries"));
        }
        if col_indices.len() != values.len() {
            return Err(SparseError::Length("col_indices and values"));
        }
        if row_offsets[0] != 0
            || row_offsets[nrows] != col_indices.len()
            || row_offsets.windows(2).any(|w| w[0] > w[1])
        {
            return Err(SparseError::BadOffsets);
        }
        for row in 0..nrows {
            let cols = &col_indices[row_offsets[row]..row_offsets[row + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) || cols.iter().any(|&c| c >= ncols) {
                return Err(SparseError::BadColumns { row, ncols });
            }
            for (k, &c) in cols.iter().enumerate() {
                if !values[row_offsets[row] + k].is_finite() {
                    return Err(SparseError::NonFinite { row, col: c });
                }
            }
        }
        Ok(Self { nrows, ncols, row_offsets, col_indices, values })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, T)>,
    ) -> Result<Self, SparseError> {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SparseError::BadColumns { row: r, ncols });
            }
            if last == Some((r, c)) {
                *values.last_mut().expect("nonempty") += v;
                continue;
            }
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(nrows, ncols, row_offsets, col_indices, values)
    }

    /// Sparse copy of a dense matrix keeping the nonzero entries.
    pub fn from_dense(dense: ArrayView2<'_, T>) -> Self {
        let (nrows, ncols) = dense.dim();
        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        row_offsets.push(0);
        for row in dense.rows() {
            for (c, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self { nrows, ncols, row_offsets, col_indices, values }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Column indices and values of one row.
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let span = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn to_dense(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for (i, j, v) in self.iter() {
            out[[i, j]] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let triplets = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, triplets).expect("transpose of valid CSR")
    }

    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && self.iter().all(|(i, j, v)| self.get(j, i) == v)
    }

    /// `self · rhs` for dense `rhs`.
    pub fn matmul_dense(&self, rhs: ArrayView2<'_, T>) -> Array2<T> {
        assert_eq!(self.ncols, rhs.nrows(), "spmm shape mismatch");
        let rhs = rhs.as_standard_layout();
        let width = rhs.ncols();
        let src = rhs.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.nrows, width));
        if width == 0 {
            return out;
        }
        let dst = out.as_slice_mut().expect("fresh array is contiguous");
        for (i, out_row) in dst.chunks_exact_mut(width).enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                axpy(out_row, v, &src[j * width..(j + 1) * width]);
            }
        }
        out
    }

    /// `selfᵀ · rhs` without materialising the transpose.
    pub fn transpose_matmul_dense(&self, rhs: ArrayView2<'_, T>) -> Array2<T> {
        assert_eq!(self.nrows, rhs.nrows(), "spmmᵀ shape mismatch");
        let rhs = rhs.as_standard_layout();
        let width = rhs.ncols();
        let src = rhs.as_slice().expect("standard layout");
        let mut out = Array2::zeros((self.ncols, width));
        if width == 0 {
            return out;
        }
        let dst = out.as_slice_mut().expect("fresh array is contiguous");
        for (i, rhs_row) in src.chunks_exact(width).enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                axpy(&mut dst[j * width..(j + 1) * width], v, rhs_row);
            }
        }
        out
    }

    /// Sparse-sparse product, used for `Â^K`-style propagation oracles.
    pub fn matmul_sparse(&self, rhs: &SparseMatrix<T>) -> Self {
        assert_eq!(self.ncols, rhs.nrows, "sparse product shape mismatch");
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rcols, rvals) = rhs.row(k);
                triplets.extend(rcols.iter().zip(rvals).map(|(&j, &b)| (i, j, a * b)));
            }
        }
        Self::from_triplets(self.nrows, rhs.ncols, triplets).expect("product of valid CSR")
    }

    /// Symmetric permutation `P A Pᵀ` with `new[perm[i]] = old[i]`.
    pub fn permute_symmetric(&self, perm: &[usize]) -> Self {
        let triplets = self.iter().map(|(i, j, v)| (perm[i], perm[j], v)).collect();
        Self::from_triplets(self.nrows, self.ncols, triplets).expect("permutation of valid CSR")
    }

    pub fn map_values<U: Scalar>(&self, f: impl Fn(T) -> U) -> SparseMatrix<U> {
        SparseMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (y, &x) in y.iter_mut().zip(x) {
        *y += a * x;
    }
}
