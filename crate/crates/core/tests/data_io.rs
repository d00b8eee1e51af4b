//! Dataset files: round trips, validation errors, fixtures and the
//! synthetic generators.

use std::fs;
use std::path::Path;

use expander_gnn::data::*;
use expander_gnn::Labels;
use ndarray::Array2;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn small_node_dataset() -> NodeDataset {
    synth_node_dataset(&SbmParams::new(40, 2, 1.5, 3)).unwrap()
}

fn write_meta(dir: &Path, json: &str) {
    fs::write(dir.join("meta.json"), json).unwrap();
}

#[test]
fn node_round_trip_is_identity() {
    let ds = small_node_dataset();
    for gzip in [false, true] {
        let dir = tempfile::tempdir().unwrap();
        write_node_dataset(dir.path(), &ds, gzip).unwrap();
        assert_eq!(load_node_dataset(dir.path()).unwrap(), ds);
        assert_eq!(load_dataset(dir.path()).unwrap(), Dataset::Node(ds.clone()));
    }
}

#[test]
fn graph_round_trip_is_identity() {
    let ds = synth_graph_dataset(&ErParams { graphs: 7, min_nodes: 3, max_nodes: 9, p: (0.2, 0.6), seed: 1 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_graph_dataset(dir.path(), &ds).unwrap();
    assert_eq!(load_graph_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn short_feature_file_is_named() {
    let ds = synth_node_dataset(&SbmParams::new(10, 2, 1.0, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_node_dataset(dir.path(), &ds, false).unwrap();
    let path = dir.path().join("features.tsv");
    let text = fs::read_to_string(&path).unwrap();
    let nine: Vec<&str> = text.lines().take(9).collect();
    fs::write(&path, nine.join("\n") + "\n").unwrap();
    let err = load_node_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("features.tsv"), "{err}");
    assert!(err.contains("10") && err.contains('9'), "{err}");
}

#[test]
fn malformed_lines_are_located() {
    let ds = small_node_dataset();
    let dir = tempfile::tempdir().unwrap();
    write_node_dataset(dir.path(), &ds, false).unwrap();
    let labels = dir.path().join("labels.tsv");
    let mut lines: Vec<String> = fs::read_to_string(&labels).unwrap().lines().map(String::from).collect();
    lines[4] = "seven".into();
    fs::write(&labels, lines.join("\n") + "\n").unwrap();
    let err = load_node_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.starts_with("labels.tsv:5:"), "{err}");

    write_node_dataset(dir.path(), &ds, false).unwrap();
    let edges = dir.path().join("edges.tsv");
    let mut text = fs::read_to_string(&edges).unwrap();
    text.push_str("3\t3\n");
    fs::write(&edges, text).unwrap();
    let err = load_node_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("edges.tsv") && err.contains("self-loop"), "{err}");
}

#[test]
fn graph_lines_load_in_order() {
    let dir = tempfile::tempdir().unwrap();
    write_meta(
        dir.path(),
        r#"{"name":"two","task":"graph-classification","num_nodes":5,"num_graphs":2,"num_edges":3,"feature_dim":1,"num_classes":2}"#,
    );
    fs::write(
        dir.path().join("graphs.jsonl"),
        "{\"edges\":[[0,1]],\"features\":[[1.0],[2.0]],\"label\":1}\n{\"edges\":[[0,1],[1,2]],\"features\":[[0.5],[0.5],[0.5]],\"label\":0}\n",
    )
    .unwrap();
    let ds = load_graph_dataset(dir.path()).unwrap();
    assert_eq!(ds.graphs.len(), 2);
    assert_eq!(ds.graphs[0].num_nodes(), 2);
    assert_eq!(ds.graphs[1].num_nodes(), 3);
    assert_eq!(ds.classes().unwrap(), vec![1, 0]);

    // A fractional class is rejected, a real regression target is not.
    fs::write(
        dir.path().join("graphs.jsonl"),
        "{\"edges\":[[0,1]],\"features\":[[1.0],[2.0]],\"label\":1.5}\n{\"edges\":[[0,1],[1,2]],\"features\":[[0.5],[0.5],[0.5]],\"label\":0}\n",
    )
    .unwrap();
    assert!(load_graph_dataset(dir.path()).unwrap_err().to_string().starts_with("graphs.jsonl:1:"));
    write_meta(
        dir.path(),
        r#"{"name":"two","task":"graph-regression","num_nodes":5,"num_graphs":2,"num_edges":3,"feature_dim":1}"#,
    );
    let ds = load_graph_dataset(dir.path()).unwrap();
    assert_eq!(ds.graphs[0].labels(), &Labels::GraphValue(1.5));
    assert_eq!(ds.graphs[1].labels(), &Labels::GraphValue(0.0));
}

#[test]
fn out_of_range_edge_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    write_meta(
        dir.path(),
        r#"{"name":"bad","task":"graph-classification","num_nodes":4,"num_graphs":2,"num_edges":2,"feature_dim":1,"num_classes":2}"#,
    );
    fs::write(
        dir.path().join("graphs.jsonl"),
        "{\"edges\":[[0,1]],\"features\":[[1.0],[2.0]],\"label\":1}\n{\"edges\":[[0,2]],\"features\":[[0.5],[0.5]],\"label\":0}\n",
    )
    .unwrap();
    let err = load_graph_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.starts_with("graphs.jsonl:2:"), "{err}");
}

#[test]
fn count_mismatches_are_rejected() {
    let ds = synth_graph_dataset(&ErParams::new(4, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_graph_dataset(dir.path(), &ds).unwrap();
    let mut meta = ds.meta.clone();
    meta.num_edges += 1;
    write_meta(dir.path(), &serde_json::to_string(&meta).unwrap());
    assert!(load_graph_dataset(dir.path()).unwrap_err().to_string().contains("edges"));
}

#[test]
fn fixtures_have_the_published_sizes() {
    for (name, nodes, edges, dim, classes) in
        [("cora", 2708, 5278, 1433, 7), ("citeseer", 3327, 4552, 3703, 6), ("pubmed", 19717, 44324, 500, 3)]
    {
        let ds = load_node_dataset(&fixture(name)).unwrap();
        assert_eq!(ds.graph.num_nodes(), nodes, "{name}");
        assert_eq!(ds.graph.num_edges(), edges, "{name}");
        assert_eq!(ds.graph.feature_dim(), dim, "{name}");
        assert_eq!(ds.meta.num_classes, Some(classes));
        let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test].iter().map(|&s| ds.split.indices(s).len()).collect();
        assert_eq!(sizes, vec![20 * classes, 500, 1000], "{name}");
    }
}

/// Test accuracy of the nearest class mean fitted on training nodes.
fn nearest_mean_accuracy(ds: &NodeDataset) -> f64 {
    let k = ds.meta.num_classes.unwrap();
    let x = ds.graph.features();
    let y = ds.labels();
    let mut means = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0.0; k];
    for i in ds.split.indices(Split::Train) {
        let mut row = means.row_mut(y[i]);
        row += &x.row(i);
        counts[y[i]] += 1.0;
    }
    for (c, mut row) in means.rows_mut().into_iter().enumerate() {
        row /= counts[c];
    }
    let test = ds.split.indices(Split::Test);
    let correct = test
        .iter()
        .filter(|&&i| {
            let d = |c: usize| (&x.row(i) - &means.row(c)).mapv(|v| v * v).sum();
            (0..k).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap() == y[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn node_generator_separation() {
    let mut null = Vec::new();
    for seed in 0..5 {
        null.push(nearest_mean_accuracy(&synth_node_dataset(&SbmParams::new(1500, 3, 0.0, seed)).unwrap()));
        let sharp = synth_node_dataset(&SbmParams::new(1500, 3, 6.0, seed)).unwrap();
        assert!(nearest_mean_accuracy(&sharp) >= 0.99);
    }
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    assert!((mean - 1.0 / 3.0).abs() < 0.05, "{null:?}");
}

#[test]
fn node_generator_is_deterministic_on_disk() {
    let ds = |seed| synth_node_dataset(&SbmParams::new(60, 3, 2.0, seed)).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_node_dataset(a.path(), &ds(4), false).unwrap();
    write_node_dataset(b.path(), &ds(4), false).unwrap();
    for f in ["meta.json", "edges.tsv", "features.tsv", "labels.tsv", "split.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(ds(4), ds(5));
    let d = ds(4);
    let counts: Vec<usize> = [Split::Train, Split::Val, Split::Test].iter().map(|&s| d.split.indices(s).len()).collect();
    assert_eq!(counts, vec![36, 12, 12]);
}

#[test]
fn graph_generator_classes_differ_in_degree() {
    for (graphs, seed) in [(200, 0), (201, 1)] {
        let ds = synth_graph_dataset(&ErParams::new(graphs, seed)).unwrap();
        assert_eq!(ds, synth_graph_dataset(&ErParams::new(graphs, seed)).unwrap());
        let classes = ds.classes().unwrap();
        let ones = classes.iter().filter(|&&c| c == 1).count();
        assert_eq!((graphs - ones, ones), (graphs.div_ceil(2), graphs / 2));
        // Expected mean degree is 1.9 vs 7.6; split halfway.
        let correct = ds
            .graphs
            .iter()
            .zip(&classes)
            .filter(|(g, &c)| {
                let mean_degree = 2.0 * g.num_edges() as f64 / g.num_nodes() as f64;
                usize::from(mean_degree > 4.75) == c
            })
            .count();
        assert!(correct as f64 >= 0.95 * graphs as f64, "{correct}/{graphs}");
        for g in &ds.graphs {
            assert!(g.features().column(0).iter().all(|&v| v == 1.0));
        }
    }
}
