//! On-disk dataset formats, loaders, writers and synthetic generators.
//!
//! Node datasets are a directory with `meta.json`, `edges.tsv`,
//! `features.tsv`, `labels.tsv` and `split.tsv`. Graph datasets are
//! `meta.json` plus `graphs.jsonl`, one graph per line. A gzipped
//! `features.tsv.gz` is read when `features.tsv` is absent.

mod io;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Labels};

pub use io::{load_dataset, load_graph_dataset, load_node_dataset, read_meta, write_graph_dataset, write_node_dataset};
pub use synth::{graph_features, synth_graph_dataset, synth_node_dataset, ErParams, SbmParams};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}: expected {expected} {what}, found {found}")]
    Count { file: String, what: &'static str, expected: usize, found: usize },
    #[error("{0}")]
    Invalid(String),
}

impl DataError {
    pub(crate) fn parse(file: &str, line: usize, msg: impl Into<String>) -> Self {
        DataError::Parse { file: file.to_string(), line, msg: msg.into() }
    }

    pub(crate) fn graph(file: &str, line: usize, e: GraphError) -> Self {
        DataError::Parse { file: file.to_string(), line, msg: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetTask {
    NodeClassification,
    GraphClassification,
    GraphRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub name: String,
    pub task: DatasetTask,
    /// Node count (node datasets) or total node count over all graphs.
    pub num_nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_graphs: Option<usize>,
    /// Undirected edges, stored once.
    pub num_edges: usize,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "none" => Ok(Split::None),
            _ => Err(format!("unknown split token '{s}'")),
        }
    }
}

/// One split token per node (or graph).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment(Vec<Split>);

impl SplitAssignment {
    /// Rejects assignments missing any of train, val or test.
    pub fn new(tokens: Vec<Split>) -> Result<Self, DataError> {
        for needed in [Split::Train, Split::Val, Split::Test] {
            if !tokens.contains(&needed) {
                return Err(DataError::Invalid(format!("split has no {needed} entries")));
            }
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[Split] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &s)| s == which).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub meta: DatasetMeta,
    pub graph: Graph<f64>,
    pub split: SplitAssignment,
}

impl NodeDataset {
    pub fn labels(&self) -> &[usize] {
        match self.graph.labels() {
            Labels::Nodes(l) => l,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset {
    pub meta: DatasetMeta,
    /// Each graph carries `Labels::GraphClass` or `Labels::GraphValue`.
    pub graphs: Vec<Graph<f64>>,
}

impl GraphDataset {
    /// Class of each graph (classification datasets only).
    pub fn classes(&self) -> Option<Vec<usize>> {
        self.graphs
            .iter()
            .map(|g| match g.labels() {
                Labels::GraphClass(c) => Some(*c),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Node(NodeDataset),
    Graph(GraphDataset),
}

impl Dataset {
    pub fn meta(&self) -> &DatasetMeta {
        match self {
            Dataset::Node(d) => &d.meta,
            Dataset::Graph(d) => &d.meta,
        }
    }
}
