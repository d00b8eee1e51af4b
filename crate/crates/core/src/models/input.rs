//! Graph operators precomputed once per graph (or mini-batch) and shared by
//! every forward pass over it.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use ndarray::Array2;

use crate::graph::{BatchedGraph, Graph, GraphError};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

pub struct GraphInput<T> {
    features: Arc<Array2<T>>,
    features_csr: Arc<SparseMatrix<T>>,
    /// Normalised propagation operator for GCN and SGC.
    a_hat: Arc<SparseMatrix<T>>,
    self_loops: bool,
    adjacency: Arc<SparseMatrix<T>>,
    /// `D⁻¹A` with isolated rows left empty.
    mean_adjacency: Arc<SparseMatrix<T>>,
    /// Row index of each stored adjacency entry, and `nodes × entries` matrix
    /// averaging per-entry rows back into their node.
    entry_rows: Arc<Vec<usize>>,
    entry_cols: Arc<Vec<usize>>,
    entry_mean: Arc<SparseMatrix<T>>,
    degrees: Vec<usize>,
    ranges: Arc<Vec<Range<usize>>>,
    propagated: Mutex<HashMap<usize, Arc<Array2<T>>>>,
    /// Parameter-free model prefixes, keyed by model description.
    frozen: Mutex<HashMap<String, Arc<Array2<T>>>>,
}

impl<T: Scalar> GraphInput<T> {
    /// Prepares a single graph; it forms one readout range.
    pub fn new(graph: &Graph<T>, self_loops: bool) -> Result<Self, GraphError> {
        Self::with_ranges(graph, self_loops, vec![0..graph.num_nodes()])
    }

    pub fn from_batch(batch: &BatchedGraph<T>, self_loops: bool) -> Result<Self, GraphError> {
        Self::with_ranges(batch.graph(), self_loops, batch.ranges().to_vec())
    }

    fn with_ranges(graph: &Graph<T>, self_loops: bool, ranges: Vec<Range<usize>>) -> Result<Self, GraphError> {
        let n = graph.num_nodes();
        let adjacency = graph.adjacency().clone();
        let degrees = graph.degrees();
        let inv: Vec<T> = degrees.iter().map(|&d| T::one() / T::of_usize(d.max(1))).collect();

        let mut entry_rows = Vec::with_capacity(adjacency.nnz());
        for i in 0..n {
            entry_rows.extend(std::iter::repeat_n(i, degrees[i]));
        }
        let entry_cols = adjacency.col_indices().to_vec();
        let mean_adjacency = SparseMatrix::new(
            n,
            n,
            adjacency.row_offsets().to_vec(),
            entry_cols.clone(),
            entry_rows.iter().map(|&i| inv[i]).collect(),
        )
        .expect("same pattern as the adjacency");
        let entry_mean = SparseMatrix::new(
            n,
            entry_rows.len(),
            adjacency.row_offsets().to_vec(),
            (0..entry_rows.len()).collect(),
            entry_rows.iter().map(|&i| inv[i]).collect(),
        )
        .expect("one entry per stored edge");

        Ok(Self {
            features: Arc::new(graph.features().clone()),
            features_csr: Arc::new(SparseMatrix::from_dense(graph.features().view())),
            a_hat: Arc::new(graph.normalize_adjacency(self_loops)?),
            self_loops,
            adjacency: Arc::new(adjacency),
            mean_adjacency: Arc::new(mean_adjacency),
            entry_rows: Arc::new(entry_rows),
            entry_cols: Arc::new(entry_cols),
            entry_mean: Arc::new(entry_mean),
            degrees,
            ranges: Arc::new(ranges),
            propagated: Mutex::new(HashMap::new()),
            frozen: Mutex::new(HashMap::new()),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Arc<Array2<T>> {
        &self.features
    }

    pub fn features_csr(&self) -> &Arc<SparseMatrix<T>> {
        &self.features_csr
    }

    pub fn a_hat(&self) -> &Arc<SparseMatrix<T>> {
        &self.a_hat
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    pub fn adjacency(&self) -> &Arc<SparseMatrix<T>> {
        &self.adjacency
    }

    pub fn mean_adjacency(&self) -> &Arc<SparseMatrix<T>> {
        &self.mean_adjacency
    }

    pub(crate) fn entry_rows(&self) -> &Arc<Vec<usize>> {
        &self.entry_rows
    }

    pub(crate) fn entry_cols(&self) -> &Arc<Vec<usize>> {
        &self.entry_cols
    }

    pub(crate) fn entry_mean(&self) -> &Arc<SparseMatrix<T>> {
        &self.entry_mean
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn ranges(&self) -> &Arc<Vec<Range<usize>>> {
        &self.ranges
    }

    /// `Â^k X`, computed on first use and cached for the lifetime of this input.
    pub fn propagated(&self, k: usize) -> Arc<Array2<T>> {
        let mut cache = self.propagated.lock().expect("cache lock");
        if let Some(hit) = cache.get(&k) {
            return Arc::clone(hit);
        }
        let mut x = (*self.features).clone();
        for _ in 0..k {
            x = self.a_hat.matmul_dense(x.view());
        }
        let x = Arc::new(x);
        cache.insert(k, Arc::clone(&x));
        x
    }

    pub fn is_propagation_cached(&self, k: usize) -> bool {
        self.propagated.lock().expect("cache lock").contains_key(&k)
    }

    pub(crate) fn frozen(&self, key: &str) -> Option<Arc<Array2<T>>> {
        self.frozen.lock().expect("cache lock").get(key).cloned()
    }

    pub(crate) fn freeze(&self, key: String, value: Arc<Array2<T>>) {
        self.frozen.lock().expect("cache lock").insert(key, value);
    }
}

/// Mean of `ln(d + 1)` over the given nodes.
pub fn log_degree_mean(degrees: &[usize], nodes: impl IntoIterator<Item = usize>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for i in nodes {
        sum += (degrees[i] as f64 + 1.0).ln();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
