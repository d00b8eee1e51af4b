//! Immutable graphs, adjacency normalisation and block-diagonal batching.

use std::collections::HashSet;
use std::ops::Range;

use ndarray::{concatenate, Array2, Axis};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge {edge}: node index {index} out of range for {num_nodes} nodes")]
    OutOfRange { edge: usize, index: usize, num_nodes: usize },
    #[error("edge {edge}: duplicate edge ({u}, {v})")]
    DuplicateEdge { edge: usize, u: usize, v: usize },
    #[error("edge {edge}: self-loop on node {node}")]
    SelfLoop { edge: usize, node: usize },
    #[error("feature matrix has {found} rows, expected {expected}")]
    FeatureRows { expected: usize, found: usize },
    #[error("{found} node labels given for {expected} nodes")]
    LabelCount { expected: usize, found: usize },
    #[error("node {node} has degree zero; normalisation divides by its square root")]
    ZeroDegree { node: usize },
    #[error("not a permutation of 0..{0}")]
    NotPermutation(usize),
    #[error("cannot batch an empty list of graphs")]
    EmptyBatch,
    #[error("graph {graph} has feature dim {found}, expected {expected}")]
    FeatureDim { graph: usize, expected: usize, found: usize },
}

/// Supervision attached to a graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Labels {
    #[default]
    None,
    /// One class per node.
    Nodes(Vec<usize>),
    /// One class for the whole graph.
    GraphClass(usize),
    /// One real target for the whole graph.
    GraphValue(f64),
}

/// Undirected graph with node features.
///
/// Edges are stored once (`u < v`) and symmetrised into a CSR adjacency with
/// unit values.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    edges: Vec<(usize, usize)>,
    adjacency: SparseMatrix<T>,
    features: Array2<T>,
    labels: Labels,
}

impl<T: Scalar> Graph<T> {
    /// Validates and symmetrises an undirected edge list. Each pair may be
    /// given in either orientation, but only once.
    pub fn new(
        num_nodes: usize,
        edge_list: &[(usize, usize)],
        features: Array2<T>,
        labels: Labels,
    ) -> Result<Self, GraphError> {
        if features.nrows() != num_nodes {
            return Err(GraphError::FeatureRows { expected: num_nodes, found: features.nrows() });
        }
        if let Labels::Nodes(l) = &labels {
            if l.len() != num_nodes {
                return Err(GraphError::LabelCount { expected: num_nodes, found: l.len() });
            }
        }
        let mut seen = HashSet::with_capacity(edge_list.len());
        let mut edges = Vec::with_capacity(edge_list.len());
        for (edge, &(u, v)) in edge_list.iter().enumerate() {
            for index in [u, v] {
                if index >= num_nodes {
                    return Err(GraphError::OutOfRange { edge, index, num_nodes });
                }
            }
            if u == v {
                return Err(GraphError::SelfLoop { edge, node: u });
            }
            let key = (u.min(v), u.max(v));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge { edge, u, v });
            }
            edges.push(key);
        }
        edges.sort_unstable();
        let triplets = edges
            .iter()
            .flat_map(|&(u, v)| [(u, v, T::one()), (v, u, T::one())])
            .collect();
        let adjacency = SparseMatrix::from_triplets(num_nodes, num_nodes, triplets)
            .expect("validated edge list");
        Ok(Self { edges, adjacency, features, labels })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Undirected edges as sorted `(u, v)` pairs with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn adjacency(&self) -> &SparseMatrix<T> {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.adjacency.row(i).0
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adjacency.row_offsets().windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn with_features(&self, features: Array2<T>) -> Result<Self, GraphError> {
        if features.nrows() != self.num_nodes() {
            return Err(GraphError::FeatureRows {
                expected: self.num_nodes(),
                found: features.nrows(),
            });
        }
        Ok(Self { features, ..self.clone() })
    }

    /// Same graph with features converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            edges: self.edges.clone(),
            adjacency: self.adjacency.map_values(|v| U::of(v.to_f64_lossy())),
            features: self.features.mapv(|v| U::of(v.to_f64_lossy())),
            labels: self.labels.clone(),
        }
    }

    pub fn with_labels(mut self, labels: Labels) -> Self {
        self.labels = labels;
        self
    }

    /// Copy with each feature row scaled to unit L1 norm (zero rows untouched).
    pub fn row_normalized_features(&self) -> Self {
        let mut features = self.features.clone();
        for mut row in features.rows_mut() {
            let s: T = row.iter().map(|v| v.abs()).sum();
            if s > T::zero() {
                row.mapv_inplace(|v| v / s);
            }
        }
        Self { features, ..self.clone() }
    }

    /// `D^{-1/2} (A [+ I]) D^{-1/2}`, degrees taken after self-loop insertion.
    pub fn normalize_adjacency(&self, add_self_loops: bool) -> Result<SparseMatrix<T>, GraphError> {
        let n = self.num_nodes();
        let extra = usize::from(add_self_loops);
        let deg: Vec<T> = self
            .degrees()
            .into_iter()
            .enumerate()
            .map(|(node, d)| match d + extra {
                0 => Err(GraphError::ZeroDegree { node }),
                d => Ok(T::of_usize(d)),
            })
            .collect::<Result<_, _>>()?;
        let weight = |i: usize, j: usize| T::one() / (deg[i] * deg[j]).sqrt();
        let mut triplets: Vec<_> = self.adjacency.iter().map(|(i, j, _)| (i, j, weight(i, j))).collect();
        if add_self_loops {
            triplets.extend((0..n).map(|i| (i, i, T::one() / deg[i])));
        }
        Ok(SparseMatrix::from_triplets(n, n, triplets).expect("valid normalised adjacency"))
    }

    /// Relabels node `i` as `perm[i]`, moving feature rows and node labels along.
    pub fn permute_nodes(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.num_nodes();
        check_permutation(perm, n)?;
        let edges: Vec<_> = self.edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let mut features = Array2::zeros(self.features.raw_dim());
        for (i, row) in self.features.rows().into_iter().enumerate() {
            features.row_mut(perm[i]).assign(&row);
        }
        let labels = match &self.labels {
            Labels::Nodes(l) => {
                let mut out = vec![0; n];
                for (i, &y) in l.iter().enumerate() {
                    out[perm[i]] = y;
                }
                Labels::Nodes(out)
            }
            other => other.clone(),
        };
        Self::new(n, &edges, features, labels)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<(), GraphError> {
    if perm.len() != n {
        return Err(GraphError::NotPermutation(n));
    }
    let mut hit = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut hit[p], true) {
            return Err(GraphError::NotPermutation(n));
        }
    }
    Ok(())
}

/// Several graphs merged into one block-diagonal graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchedGraph<T> {
    graph: Graph<T>,
    ranges: Vec<Range<usize>>,
    member_labels: Vec<Labels>,
}

impl<T: Scalar> BatchedGraph<T> {
    pub fn new<'a, I>(graphs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = &'a Graph<T>>,
    {
        let graphs: Vec<&Graph<T>> = graphs.into_iter().collect();
        let first = graphs.first().ok_or(GraphError::EmptyBatch)?;
        let dim = first.feature_dim();
        let mut ranges = Vec::with_capacity(graphs.len());
        let mut edges = Vec::new();
        let mut offset = 0;
        for (idx, g) in graphs.iter().enumerate() {
            if g.feature_dim() != dim {
                return Err(GraphError::FeatureDim { graph: idx, expected: dim, found: g.feature_dim() });
            }
            edges.extend(g.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
            ranges.push(offset..offset + g.num_nodes());
            offset += g.num_nodes();
        }
        let views: Vec<_> = graphs.iter().map(|g| g.features().view()).collect();
        let features = concatenate(Axis(0), &views).expect("uniform feature dim");
        let node_labels: Option<Vec<usize>> = graphs
            .iter()
            .map(|g| match g.labels() {
                Labels::Nodes(l) => Some(l.clone()),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()
            .map(|ls| ls.concat());
        let labels = node_labels.map(Labels::Nodes).unwrap_or_default();
        let graph = Graph::new(offset, &edges, features, labels)?;
        let member_labels = graphs.iter().map(|g| g.labels().clone()).collect();
        Ok(Self { graph, ranges, member_labels })
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    /// Node-index range of each member graph.
    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn member_labels(&self) -> &[Labels] {
        &self.member_labels
    }

    pub fn num_graphs(&self) -> usize {
        self.ranges.len()
    }
}

/// Free-function form of [`BatchedGraph::new`].
pub fn block_diagonal_batch<'a, T: Scalar>(
    graphs: impl IntoIterator<Item = &'a Graph<T>>,
) -> Result<BatchedGraph<T>, GraphError> {
    BatchedGraph::new(graphs)
}
