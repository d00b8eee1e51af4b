use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{DatasetMeta, DatasetTask, GraphDataset, NodeDataset, Split, SplitAssignment};
use crate::graph::{Graph, Labels};
use crate::rng::{substream, Purpose};

/// Stochastic block model with Gaussian class-mean features.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    pub nodes: usize,
    pub classes: usize,
    /// Distance of each class mean from the origin along its own axis, in
    /// units of the (unit) feature noise.
    pub separation: f64,
    pub p_intra: f64,
    pub p_inter: f64,
    pub seed: u64,
}

impl SbmParams {
    /// Expected degree about 4 inside a community and 1 across.
    pub fn new(nodes: usize, classes: usize, separation: f64, seed: u64) -> Self {
        let block = (nodes / classes.max(1)).max(2) as f64;
        let others = (nodes as f64 - block).max(1.0);
        Self {
            nodes,
            classes,
            separation,
            p_intra: (4.0 / (block - 1.0)).min(1.0),
            p_inter: (1.0 / others).min(1.0),
            seed,
        }
    }
}

/// SBM node-classification dataset: node `i` belongs to class
/// `i · classes / nodes`, features are `separation · e_class + N(0, I)` in
/// `classes` dimensions, and a seeded permutation assigns 60/20/20
/// train/val/test.
pub fn synth_node_dataset(p: &SbmParams) -> Result<NodeDataset, String> {
    if p.classes < 2 || p.nodes < 5 * p.classes {
        return Err(format!("need at least 2 classes and 5 nodes per class, got {} / {}", p.classes, p.nodes));
    }
    if !(p.separation >= 0.0) {
        return Err(format!("separation must be >= 0, got {}", p.separation));
    }
    for q in [p.p_intra, p.p_inter] {
        if !(0.0..=1.0).contains(&q) {
            return Err(format!("edge probability {q} outside [0, 1]"));
        }
    }
    let n = p.nodes;
    let labels: Vec<usize> = (0..n).map(|i| i * p.classes / n).collect();

    let mut rng = substream(p.seed, Purpose::Synth, 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let q = if labels[u] == labels[v] { p.p_intra } else { p.p_inter };
            if rng.random::<f64>() < q {
                edges.push((u, v));
            }
        }
    }

    let mut rng = substream(p.seed, Purpose::Synth, 1);
    let mut x = Array2::zeros((n, p.classes));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        row[labels[i]] += p.separation;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(p.seed, Purpose::Split, 0));
    let (n_train, n_val) = (n * 6 / 10, n * 2 / 10);
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            split[i] = Split::Train;
        } else if rank < n_train + n_val {
            split[i] = Split::Val;
        }
    }

    let graph = Graph::new(n, &edges, x, Labels::Nodes(labels)).map_err(|e| e.to_string())?;
    let meta = DatasetMeta {
        name: format!("sbm-n{n}-c{}-sep{}-s{}", p.classes, p.separation, p.seed),
        task: DatasetTask::NodeClassification,
        num_nodes: n,
        num_graphs: None,
        num_edges: graph.num_edges(),
        feature_dim: p.classes,
        num_classes: Some(p.classes),
    };
    Ok(NodeDataset { meta, graph, split: SplitAssignment::new(split).map_err(|e| e.to_string())? })
}

/// Two-class Erdős–Rényi graph set; the classes differ only in edge
/// probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ErParams {
    pub graphs: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Edge probability of class 0 and class 1.
    pub p: (f64, f64),
    pub seed: u64,
}

impl ErParams {
    pub fn new(graphs: usize, seed: u64) -> Self {
        Self { graphs, min_nodes: 20, max_nodes: 20, p: (0.1, 0.4), seed }
    }
}

/// Node features `[1, deg, deg/(n-1), ln(1+deg)]`: a constant plus three
/// views of the degree.
pub fn graph_features(num_nodes: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut deg = vec![0usize; num_nodes];
    for &(u, v) in edges {
        deg[u] += 1;
        deg[v] += 1;
    }
    let denom = num_nodes.saturating_sub(1).max(1) as f64;
    let mut x = Array2::zeros((num_nodes, 4));
    for (i, &d) in deg.iter().enumerate() {
        let d = d as f64;
        x[[i, 0]] = 1.0;
        x[[i, 1]] = d;
        x[[i, 2]] = d / denom;
        x[[i, 3]] = d.ln_1p();
    }
    x
}

/// Graph `g` has class `g mod 2`, so class 0 gets `⌈graphs/2⌉` members.
pub fn synth_graph_dataset(p: &ErParams) -> Result<GraphDataset, String> {
    if p.graphs < 2 || p.min_nodes == 0 || p.min_nodes > p.max_nodes {
        return Err(format!(
            "need at least 2 graphs and 1 <= min_nodes <= max_nodes, got {} graphs, {}..={} nodes",
            p.graphs, p.min_nodes, p.max_nodes
        ));
    }
    for q in [p.p.0, p.p.1] {
        if !(0.0..=1.0).contains(&q) {
            return Err(format!("edge probability {q} outside [0, 1]"));
        }
    }
    let mut graphs = Vec::with_capacity(p.graphs);
    let (mut nodes, mut edge_total) = (0, 0);
    for g in 0..p.graphs {
        let mut rng = substream(p.seed, Purpose::Synth, g as u64);
        let class = g % 2;
        let q = if class == 0 { p.p.0 } else { p.p.1 };
        let n = rng.random_range(p.min_nodes..=p.max_nodes);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.random::<f64>() < q {
                    edges.push((u, v));
                }
            }
        }
        let x = graph_features(n, &edges);
        let graph = Graph::new(n, &edges, x, Labels::GraphClass(class)).map_err(|e| e.to_string())?;
        nodes += n;
        edge_total += graph.num_edges();
        graphs.push(graph);
    }
    let meta = DatasetMeta {
        name: format!("er-{}-vs-{}-g{}-s{}", p.p.0, p.p.1, p.graphs, p.seed),
        task: DatasetTask::GraphClassification,
        num_nodes: nodes,
        num_graphs: Some(p.graphs),
        num_edges: edge_total,
        feature_dim: 4,
        num_classes: Some(2),
    };
    Ok(GraphDataset { meta, graphs })
}
