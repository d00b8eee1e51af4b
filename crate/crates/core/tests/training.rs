//! Training harness: determinism, learning on easy tasks, metrics,
//! cross-validation, activation sweeps, learning-rate schedule, divergence
//! and test isolation.

use expander_gnn::data::*;
use expander_gnn::train::*;
use expander_gnn::{Activation, Family, HeadKind, Labels, ModelConfig, Task, Variant};
use ndarray::array;

fn sbm(separation: f64, seed: u64) -> Dataset {
    Dataset::Node(synth_node_dataset(&SbmParams::new(300, 3, separation, seed)).unwrap())
}

fn er(graphs: usize, seed: u64) -> GraphDataset {
    synth_graph_dataset(&ErParams { graphs, min_nodes: 8, max_nodes: 14, p: (0.15, 0.5), seed }).unwrap()
}

fn gcn(k: usize) -> ModelConfig {
    ModelConfig::new(Family::Gcn, Variant::Vanilla, 2, 16, k)
}

fn graph_cfg() -> ModelConfig {
    let mut c = ModelConfig::new(Family::Gin, Variant::Vanilla, 2, 16, 2);
    c.task = Task::GraphClass;
    c.head = HeadKind::Mlp3;
    c.batchnorm = true;
    c
}

fn without_time(mut r: TrainReport) -> TrainReport {
    r.wall_seconds = 0.0;
    r
}

#[test]
fn same_seed_gives_identical_reports() {
    let ds = sbm(1.5, 0);
    let hyper = TrainHyper { epochs: 30, ..TrainHyper::defaults_for(&gcn(3)) };
    let a = without_time(train(&gcn(3), &ds, &hyper, 7).unwrap().report);
    let b = without_time(train(&gcn(3), &ds, &hyper, 7).unwrap().report);
    assert_eq!(a, b);
    assert_eq!(a.to_json(), b.to_json());
    let c = without_time(train(&gcn(3), &ds, &hyper, 8).unwrap().report);
    assert_ne!(a.curve, c.curve);

    let gds = Dataset::Graph(er(40, 1));
    let gh = TrainHyper { epochs: 5, batch_size: 8, ..TrainHyper::defaults_for(&graph_cfg()) };
    let a = without_time(train(&graph_cfg(), &gds, &gh, 3).unwrap().report);
    let b = without_time(train(&graph_cfg(), &gds, &gh, 3).unwrap().report);
    assert_eq!(a, b);
}

#[test]
fn separable_node_task_is_learned_within_50_epochs() {
    // No edges across classes, so propagation cannot mix class means and
    // the propagated features stay linearly separable.
    for seed in 0..3 {
        let params = SbmParams { p_inter: 0.0, ..SbmParams::new(300, 3, 8.0, seed) };
        let ds = Dataset::Node(synth_node_dataset(&params).unwrap());
        let hyper = TrainHyper { epochs: 50, ..TrainHyper::defaults_for(&gcn(3)) };
        let r = train(&gcn(3), &ds, &hyper, seed).unwrap().report;
        assert!(r.epochs_run <= 50);
        assert!(r.test_metric >= 0.99, "seed {seed}: {}", r.test_metric);
    }
}

#[test]
fn evaluation_examples() {
    let labels = [0, 1, 1, 0];
    let rows = [0, 1, 2, 3];
    let perfect = array![[2.0, 1.0], [0.0, 1.0], [-1.0, 3.0], [5.0, 4.0]];
    assert_eq!(accuracy(&perfect, &labels, &rows).unwrap(), 1.0);
    let constant = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
    assert_eq!(accuracy(&constant, &labels, &rows).unwrap(), 0.5);
    assert!(accuracy(&constant, &labels, &[]).is_err());

    let targets = [0.5, -2.0, 3.25];
    let shifted = array![[1.5], [-1.0], [4.25]];
    assert_eq!(mean_absolute_error(&shifted, &targets).unwrap(), 1.0);
    assert_eq!(mean_absolute_error(&array![[0.5], [-2.0], [3.25]], &targets).unwrap(), 0.0);
}

#[test]
fn fold_statistics() {
    let planted = [0.6, 0.6, 0.6, 0.6, 0.6, 0.8, 0.8, 0.8, 0.8, 0.8];
    let (mean, std) = population_std(&planted);
    assert!((mean - 0.7).abs() < 1e-12 && (std - 0.1).abs() < 1e-12, "{mean} {std}");
    assert_eq!(population_std(&[0.75; 10]), (0.75, 0.0));
}

#[test]
fn folds_partition_and_stratify() {
    let strata: Vec<usize> = (0..53).map(|i| if i % 5 == 0 { 1 } else { 0 }).collect();
    let folds = stratified_folds(&strata, 10, 4).unwrap();
    assert_eq!(folds.len(), 10);
    let mut seen: Vec<usize> = folds.concat();
    seen.sort_unstable();
    assert_eq!(seen, (0..53).collect::<Vec<_>>());
    let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{sizes:?}");
    for f in &folds {
        let ones = f.iter().filter(|&&i| strata[i] == 1).count();
        assert!((1..=2).contains(&ones), "{f:?}");
    }
    assert_eq!(folds, stratified_folds(&strata, 10, 4).unwrap());
    assert!(matches!(
        stratified_folds(&[0, 0, 0, 1, 1], 3, 0),
        Err(TrainError::SmallClass { class: 1, count: 2, folds: 3 })
    ));
}

#[test]
fn cross_validation_reports_every_fold() {
    let ds = er(40, 2);
    let hyper = TrainHyper { epochs: 3, batch_size: 8, ..TrainHyper::defaults_for(&graph_cfg()) };
    let cv = cross_validate(&graph_cfg(), &ds, &hyper, 4, 2).unwrap();
    assert_eq!(cv.reports.len(), 4);
    assert_eq!(cv.fold_metrics, cv.reports.iter().map(|r| r.test_metric).collect::<Vec<_>>());
    let (mean, std) = population_std(&cv.fold_metrics);
    assert_eq!((cv.mean, cv.std), (mean, std));
    // Thread count does not change any number.
    let serial = cross_validate(&graph_cfg(), &ds, &hyper, 4, 1).unwrap();
    assert_eq!(serial.fold_metrics, cv.fold_metrics);
}

#[test]
fn activation_sweep_prefers_relu_on_ties() {
    let mut c = gcn(3);
    c.variant = Variant::ActivationOnly;
    let ds = sbm(12.0, 1);
    let hyper = TrainHyper { epochs: 40, ..TrainHyper::defaults_for(&c) };
    let sweep = activation_sweep(&c, &ds, &hyper, 0, 3).unwrap();
    assert_eq!(sweep.reports.len(), 3);
    let order: Vec<Activation> = sweep.reports.iter().map(|(a, _)| *a).collect();
    assert_eq!(order, Activation::ALL.to_vec());
    let vals: Vec<f64> = sweep.reports.iter().map(|(_, r)| r.val_metric).collect();
    assert_eq!(vals, vec![1.0; 3], "not a tie, the tie rule is untested");
    assert_eq!(sweep.selected, Activation::Relu);
}

#[test]
fn activation_sweep_selects_the_best_validation() {
    let mut c = gcn(3);
    c.variant = Variant::ActivationOnly;
    let ds = sbm(1.0, 2);
    let hyper = TrainHyper { epochs: 20, ..TrainHyper::defaults_for(&c) };
    let sweep = activation_sweep(&c, &ds, &hyper, 0, 1).unwrap();
    let best = sweep.reports.iter().map(|(_, r)| r.val_metric).fold(f64::MIN, f64::max);
    assert_eq!(sweep.selected_report().val_metric, best);
    let first_best = sweep.reports.iter().find(|(_, r)| r.val_metric == best).unwrap().0;
    assert_eq!(sweep.selected, first_best);
}

#[test]
fn learning_rate_never_increases() {
    let ds = Dataset::Graph(er(40, 3));
    let hyper = TrainHyper {
        epochs: 40,
        batch_size: 8,
        lr_decay_patience: 2,
        min_lr: 0.0,
        ..TrainHyper::defaults_for(&graph_cfg())
    };
    let r = train(&graph_cfg(), &ds, &hyper, 0).unwrap().report;
    let lrs: Vec<f64> = r.curve.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]), "{lrs:?}");
    assert!(lrs.last() < lrs.first(), "no decay happened: {lrs:?}");
}

#[test]
fn divergence_is_reported() {
    let ds = sbm(1.0, 0);
    let hyper = TrainHyper { epochs: 50, lr: 1e200, ..TrainHyper::defaults_for(&gcn(3)) };
    match train(&gcn(3), &ds, &hyper, 0) {
        Err(TrainError::Diverged { epoch, message, report }) => {
            assert!(epoch <= 50);
            assert!(!message.is_empty());
            assert!(report.curve.len() < 50);
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report.test_metric)),
    }
}

#[test]
fn test_labels_never_reach_training() {
    // Scramble every test label: everything but the test metric must match.
    let Dataset::Node(ds) = sbm(1.0, 5) else { unreachable!() };
    let mut scrambled = ds.clone();
    let mut labels = ds.labels().to_vec();
    for i in ds.split.indices(Split::Test) {
        labels[i] = (labels[i] + 1) % 3;
    }
    scrambled.graph = scrambled.graph.with_labels(Labels::Nodes(labels));
    let hyper = TrainHyper { epochs: 40, early_stop_patience: Some(10), ..TrainHyper::defaults_for(&gcn(3)) };
    let a = without_time(train(&gcn(3), &Dataset::Node(ds), &hyper, 1).unwrap().report);
    let mut b = without_time(train(&gcn(3), &Dataset::Node(scrambled), &hyper, 1).unwrap().report);
    assert_ne!(a.test_metric, b.test_metric);
    b.test_metric = a.test_metric;
    b.dataset = a.dataset.clone();
    assert_eq!(a, b);
}

#[test]
fn test_graphs_never_reach_training() {
    let ds = er(40, 6);
    let split = GraphSplit { train: (0..30).collect(), val: (30..35).collect(), test: (35..40).collect() };
    let mut altered = ds.clone();
    for &i in &split.test {
        let g = &altered.graphs[i];
        let flipped = match g.labels() {
            Labels::GraphClass(c) => Labels::GraphClass(1 - c),
            _ => unreachable!(),
        };
        altered.graphs[i] = g.with_features(g.features() * 10.0).unwrap().with_labels(flipped);
    }
    let hyper = TrainHyper { epochs: 10, batch_size: 8, ..TrainHyper::defaults_for(&graph_cfg()) };
    let a = without_time(train_graph_split(&graph_cfg(), &ds, &hyper, &split).unwrap().report);
    let mut b = without_time(train_graph_split(&graph_cfg(), &altered, &hyper, &split).unwrap().report);
    b.test_metric = a.test_metric;
    assert_eq!(a, b);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let ds = sbm(1.0, 0);
    for bad in [
        TrainHyper { epochs: 0, ..TrainHyper::defaults_for(&gcn(3)) },
        TrainHyper { lr: -1.0, ..TrainHyper::defaults_for(&gcn(3)) },
        TrainHyper { dropout: 1.0, ..TrainHyper::defaults_for(&gcn(3)) },
    ] {
        assert!(matches!(train(&gcn(3), &ds, &bad, 0), Err(TrainError::Hyper(_))));
    }
}

#[test]
fn regression_uses_mae() {
    let mut ds = er(30, 4);
    ds.meta.task = DatasetTask::GraphRegression;
    ds.meta.num_classes = None;
    for g in ds.graphs.iter_mut() {
        let target = g.num_edges() as f64 / 10.0;
        *g = g.clone().with_labels(Labels::GraphValue(target));
    }
    let mut c = graph_cfg();
    c.task = Task::GraphReg;
    c.output_dim = 1;
    let hyper = TrainHyper { epochs: 30, batch_size: 8, lr: 1e-2, ..TrainHyper::defaults_for(&c) };
    let r = train(&c, &Dataset::Graph(ds), &hyper, 0).unwrap().report;
    assert_eq!(r.metric, Metric::Mae);
    assert!(r.test_metric.is_finite() && r.test_metric >= 0.0);
    assert!(r.curve.last().unwrap().loss < r.curve[0].loss);
}

#[test]
fn table_has_paper_columns() {
    let ds = sbm(2.0, 0);
    let hyper = TrainHyper { epochs: 5, ..TrainHyper::defaults_for(&gcn(3)) };
    let r = train(&gcn(3), &ds, &hyper, 0).unwrap().report;
    let text = render_table(&[TableRow::from_report("GCN", &r), TableRow::from_report("GCN again", &r)]);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].contains("ACC. (%)") && lines[0].contains("Params."), "{text}");
    assert!(lines[2].starts_with("GCN"));
}
