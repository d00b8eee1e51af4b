use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{
    DataError, Dataset, DatasetMeta, DatasetTask, GraphDataset, NodeDataset, Split, SplitAssignment,
};
use crate::graph::{Graph, Labels};

fn io_err(file: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { file: file.to_path_buf(), source }
}

fn open_lines(path: &Path) -> Result<Box<dyn BufRead>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    Ok(Box::new(BufReader::with_capacity(1 << 16, reader)))
}

/// Reads lines, stopping at the first I/O error. A trailing empty line is
/// not a record.
fn read_records(path: &Path) -> Result<Vec<String>, DataError> {
    let mut out = Vec::new();
    for line in open_lines(path)?.lines() {
        out.push(line.map_err(io_err(path))?);
    }
    Ok(out)
}

pub fn read_meta(dir: &Path) -> Result<DatasetMeta, DataError> {
    let path = dir.join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| DataError::parse("meta.json", e.line(), e.to_string()))
}

/// Loads `meta.json` and dispatches on its task.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    match read_meta(dir)?.task {
        DatasetTask::NodeClassification => load_node_dataset(dir).map(Dataset::Node),
        _ => load_graph_dataset(dir).map(Dataset::Graph),
    }
}

fn check_count(file: &str, what: &'static str, expected: usize, found: usize) -> Result<(), DataError> {
    if expected == found {
        Ok(())
    } else {
        Err(DataError::Count { file: file.to_string(), what, expected, found })
    }
}

fn features_path(dir: &Path) -> (PathBuf, &'static str) {
    let plain = dir.join("features.tsv");
    if plain.exists() {
        (plain, "features.tsv")
    } else {
        (dir.join("features.tsv.gz"), "features.tsv.gz")
    }
}

pub fn load_node_dataset(dir: &Path) -> Result<NodeDataset, DataError> {
    let meta = read_meta(dir)?;
    if meta.task != DatasetTask::NodeClassification {
        return Err(DataError::Invalid(format!("{}: not a node-classification dataset", dir.display())));
    }
    let n = meta.num_nodes;
    let classes = meta
        .num_classes
        .ok_or_else(|| DataError::parse("meta.json", 1, "node classification needs num_classes"))?;

    let mut edges = Vec::with_capacity(meta.num_edges);
    let mut last: Option<(usize, usize)> = None;
    for (i, line) in read_records(&dir.join("edges.tsv"))?.iter().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(DataError::parse("edges.tsv", lineno, "expected two tab-separated indices"));
        };
        let parse = |s: &str| {
            s.trim().parse::<usize>().map_err(|_| DataError::parse("edges.tsv", lineno, format!("bad node index '{s}'")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= n || v >= n {
            return Err(DataError::parse("edges.tsv", lineno, format!("node index out of range for {n} nodes")));
        }
        if u == v {
            return Err(DataError::parse("edges.tsv", lineno, format!("self-loop on node {u}")));
        }
        if u > v {
            return Err(DataError::parse("edges.tsv", lineno, "edges must be written with u < v"));
        }
        if last.is_some_and(|p| p >= (u, v)) {
            return Err(DataError::parse("edges.tsv", lineno, "edges must be sorted and unique"));
        }
        last = Some((u, v));
        edges.push((u, v));
    }
    check_count("edges.tsv", "edges", meta.num_edges, edges.len())?;

    let (fpath, fname) = features_path(dir);
    let d = meta.feature_dim;
    let mut values = Vec::with_capacity(n * d);
    let mut rows = 0;
    for line in open_lines(&fpath)?.lines() {
        let line = line.map_err(io_err(&fpath))?;
        rows += 1;
        if rows > n {
            continue;
        }
        let before = values.len();
        for tok in line.split('\t') {
            let v: f64 = tok
                .parse()
                .map_err(|_| DataError::parse(fname, rows, format!("bad feature value '{tok}'")))?;
            if !v.is_finite() {
                return Err(DataError::parse(fname, rows, "non-finite feature value"));
            }
            values.push(v);
        }
        if values.len() - before != d {
            return Err(DataError::parse(fname, rows, format!("expected {d} values, found {}", values.len() - before)));
        }
    }
    check_count(fname, "feature rows", n, rows)?;
    let features = Array2::from_shape_vec((n, d), values).expect("row count checked");

    let labels = read_records(&dir.join("labels.tsv"))?
        .iter()
        .enumerate()
        .map(|(i, l)| match l.trim().parse::<usize>() {
            Ok(y) if y < classes => Ok(y),
            _ => Err(DataError::parse("labels.tsv", i + 1, format!("expected a class in 0..{classes}, got '{l}'"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    check_count("labels.tsv", "labels", n, labels.len())?;

    let split = read_records(&dir.join("split.tsv"))?
        .iter()
        .enumerate()
        .map(|(i, l)| l.trim().parse::<Split>().map_err(|e| DataError::parse("split.tsv", i + 1, e)))
        .collect::<Result<Vec<_>, _>>()?;
    check_count("split.tsv", "split tokens", n, split.len())?;
    let split = SplitAssignment::new(split)?;

    let graph = Graph::new(n, &edges, features, Labels::Nodes(labels))
        .map_err(|e| DataError::Invalid(format!("{}: {e}", dir.display())))?;
    Ok(NodeDataset { meta, graph, split })
}

fn write_meta(dir: &Path, meta: &DatasetMeta) -> Result<(), DataError> {
    let path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(meta).expect("meta serialises") + "\n";
    fs::write(&path, text).map_err(io_err(&path))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, DataError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

/// Writes the canonical node-dataset files. Feature values use Rust's
/// shortest round-trip formatting, so a reload is exact. With `gzip` the
/// features go to `features.tsv.gz`.
pub fn write_node_dataset(dir: &Path, ds: &NodeDataset, gzip: bool) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_meta(dir, &ds.meta)?;

    let path = dir.join("edges.tsv");
    let mut w = create(&path)?;
    for &(u, v) in ds.graph.edges() {
        writeln!(w, "{u}\t{v}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let write_features = |w: &mut dyn Write, path: &Path| -> Result<(), DataError> {
        let mut line = String::new();
        for row in ds.graph.features().rows() {
            line.clear();
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    line.push('\t');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes()).map_err(io_err(path))?;
        }
        Ok(())
    };
    if gzip {
        let path = dir.join("features.tsv.gz");
        let _ = fs::remove_file(dir.join("features.tsv"));
        let mut enc = GzEncoder::new(create(&path)?, Compression::best());
        write_features(&mut enc, &path)?;
        enc.finish().and_then(|mut w| w.flush()).map_err(io_err(&path))?;
    } else {
        let path = dir.join("features.tsv");
        let _ = fs::remove_file(dir.join("features.tsv.gz"));
        let mut w = create(&path)?;
        write_features(&mut w, &path)?;
        w.flush().map_err(io_err(&path))?;
    }

    let path = dir.join("labels.tsv");
    let mut w = create(&path)?;
    for y in ds.labels() {
        writeln!(w, "{y}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join("split.tsv");
    let mut w = create(&path)?;
    for s in ds.split.tokens() {
        writeln!(w, "{s}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    edges: Vec<(usize, usize)>,
    features: Vec<Vec<f64>>,
    label: serde_json::Value,
}

pub fn load_graph_dataset(dir: &Path) -> Result<GraphDataset, DataError> {
    let meta = read_meta(dir)?;
    let file = "graphs.jsonl";
    let num_graphs = meta
        .num_graphs
        .ok_or_else(|| DataError::parse("meta.json", 1, "graph dataset needs num_graphs"))?;
    let classes = match meta.task {
        DatasetTask::NodeClassification => {
            return Err(DataError::Invalid(format!("{}: not a graph-level dataset", dir.display())))
        }
        DatasetTask::GraphClassification => Some(
            meta.num_classes
                .ok_or_else(|| DataError::parse("meta.json", 1, "graph classification needs num_classes"))?,
        ),
        DatasetTask::GraphRegression => None,
    };
    let mut graphs = Vec::new();
    let (mut nodes, mut edges) = (0, 0);
    for (i, line) in read_records(&dir.join(file))?.iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            return Err(DataError::parse(file, lineno, "empty line"));
        }
        let rec: GraphRecord =
            serde_json::from_str(line).map_err(|e| DataError::parse(file, lineno, e.to_string()))?;
        let n = rec.features.len();
        if n == 0 {
            return Err(DataError::parse(file, lineno, "graph has no nodes"));
        }
        if let Some(row) = rec.features.iter().find(|r| r.len() != meta.feature_dim) {
            return Err(DataError::parse(
                file,
                lineno,
                format!("feature row of length {}, expected {}", row.len(), meta.feature_dim),
            ));
        }
        let labels = match classes {
            Some(k) => match rec.label.as_u64() {
                Some(c) if (c as usize) < k => Labels::GraphClass(c as usize),
                _ => return Err(DataError::parse(file, lineno, format!("label must be an integer in 0..{k}"))),
            },
            None => match rec.label.as_f64() {
                Some(v) if v.is_finite() => Labels::GraphValue(v),
                _ => return Err(DataError::parse(file, lineno, "label must be a finite number")),
            },
        };
        let x = Array2::from_shape_vec((n, meta.feature_dim), rec.features.concat()).expect("rows checked");
        let g = Graph::new(n, &rec.edges, x, labels).map_err(|e| DataError::graph(file, lineno, e))?;
        nodes += n;
        edges += g.num_edges();
        graphs.push(g);
    }
    check_count(file, "graphs", num_graphs, graphs.len())?;
    check_count(file, "nodes", meta.num_nodes, nodes)?;
    check_count(file, "edges", meta.num_edges, edges)?;
    Ok(GraphDataset { meta, graphs })
}

pub fn write_graph_dataset(dir: &Path, ds: &GraphDataset) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_meta(dir, &ds.meta)?;
    let path = dir.join("graphs.jsonl");
    let mut w = create(&path)?;
    for g in &ds.graphs {
        let label = match g.labels() {
            Labels::GraphClass(c) => serde_json::Value::from(*c),
            Labels::GraphValue(v) => serde_json::Value::from(*v),
            _ => return Err(DataError::Invalid("graph without a graph-level label".into())),
        };
        let rec = GraphRecord {
            edges: g.edges().to_vec(),
            features: g.features().rows().into_iter().map(|r| r.to_vec()).collect(),
            label,
        };
        let line = serde_json::to_string(&rec).expect("record serialises");
        writeln!(w, "{line}").map_err(io_err(&path))?;
    }
    w.flush().map_err(io_err(&path))
}
