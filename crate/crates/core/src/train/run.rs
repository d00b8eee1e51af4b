use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use crate::autodiff::{Adam, AdamConfig, AutodiffError, Tape};
use crate::data::{Dataset, GraphDataset, NodeDataset, Split};
use crate::expander::ExpanderMask;
use crate::graph::{BatchedGraph, Graph, Labels};
use crate::models::{log_degree_mean, Family, GraphInput, Model, ModelConfig, ModelError, ParamCounts, TrainState};
use crate::rng::{substream, Purpose};
use crate::scalar::{Precision, Scalar};
use crate::train::cv::{fold_split, stratified_folds};
use crate::train::metrics::{accuracy, cross_entropy, mean_absolute_error};
use crate::train::{EpochRecord, Metric, TrainError, TrainHyper, TrainReport};

/// A trained model in the precision it was trained in.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    F32(Model<f32>),
    F64(Model<f64>),
}

impl TrainedModel {
    pub fn masks(&self) -> Vec<(String, ExpanderMask)> {
        let own = |v: Vec<(&str, &ExpanderMask)>| v.into_iter().map(|(n, m)| (n.to_string(), m.clone())).collect();
        match self {
            TrainedModel::F32(m) => own(m.masks()),
            TrainedModel::F64(m) => own(m.masks()),
        }
    }

    /// One TSV per parameter plus one mask file per masked parameter.
    pub fn save_params(&self, dir: &Path) -> Result<Vec<String>, crate::autodiff::AutodiffError> {
        match self {
            TrainedModel::F32(m) => m.params().save_dir(dir),
            TrainedModel::F64(m) => m.params().save_dir(dir),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: TrainedModel,
}

/// Train / validation / test graph indices for a graph-level run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Trains `cfg` (with its seed replaced by `seed`) on `dataset`. Node
/// datasets train full-batch on their stored split; graph datasets use
/// fold 0 of the seeded ten-fold assignment as test and fold 1 as
/// validation.
pub fn train(cfg: &ModelConfig, dataset: &Dataset, hyper: &TrainHyper, seed: u64) -> Result<TrainOutcome, TrainError> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    match dataset {
        Dataset::Node(ds) => {
            hyper.validate()?;
            cfg.validate()?;
            match hyper.precision {
                Precision::F32 => train_node::<f32>(&cfg, ds, hyper).map(|(r, m)| TrainOutcome { report: r, model: TrainedModel::F32(m) }),
                Precision::F64 => train_node::<f64>(&cfg, ds, hyper).map(|(r, m)| TrainOutcome { report: r, model: TrainedModel::F64(m) }),
            }
        }
        Dataset::Graph(ds) => {
            let folds = stratified_folds(&graph_strata(ds), 10, seed)?;
            train_graph_split(&cfg, ds, hyper, &fold_split(&folds, 0))
        }
    }
}

/// Graph-level training on an explicit split; `cfg.seed` drives every
/// random choice.
pub fn train_graph_split(
    cfg: &ModelConfig,
    ds: &GraphDataset,
    hyper: &TrainHyper,
    split: &GraphSplit,
) -> Result<TrainOutcome, TrainError> {
    hyper.validate()?;
    cfg.validate()?;
    match hyper.precision {
        Precision::F32 => train_graph::<f32>(cfg, ds, hyper, split).map(|(r, m)| TrainOutcome { report: r, model: TrainedModel::F32(m) }),
        Precision::F64 => train_graph::<f64>(cfg, ds, hyper, split).map(|(r, m)| TrainOutcome { report: r, model: TrainedModel::F64(m) }),
    }
}

pub(crate) fn graph_strata(ds: &GraphDataset) -> Vec<usize> {
    ds.classes().unwrap_or_else(|| vec![0; ds.graphs.len()])
}

/// Accuracy of `model` on the given node rows (evaluation mode).
pub fn evaluate_nodes<T: Scalar>(
    model: &Model<T>,
    input: &GraphInput<T>,
    labels: &[usize],
    rows: &[usize],
) -> Result<f64, TrainError> {
    accuracy(&model.predict(input)?, labels, rows)
}

struct Checkpoint<T> {
    epoch: usize,
    train: f64,
    val: f64,
    val_loss: f64,
    params: Vec<Array2<T>>,
    running: Vec<(Array1<T>, Array1<T>)>,
}

struct LoopOutput {
    best_epoch: usize,
    train: f64,
    val: f64,
    epochs_run: usize,
    curve: Vec<EpochRecord>,
}

enum LoopError {
    Diverged { epoch: usize, message: String, curve: Vec<EpochRecord> },
    Other(TrainError),
}

fn is_divergence(e: &ModelError) -> Option<String> {
    match e {
        ModelError::Autodiff(AutodiffError::NonFinite(op)) => Some(format!("{op} produced a non-finite value")),
        _ => None,
    }
}

/// Epoch loop shared by node and graph tasks: Adam steps through `step`,
/// evaluation through `eval` (returning train metric, val metric and val
/// loss), best-validation checkpointing, plateau lr decay and early stops.
/// On return the model holds the best checkpoint.
fn run_loop<T: Scalar>(
    model: &mut Model<T>,
    hyper: &TrainHyper,
    metric: Metric,
    mut step: impl FnMut(&mut Model<T>, &mut Adam<T>, usize) -> Result<f64, ModelError>,
    mut eval: impl FnMut(&Model<T>) -> Result<(f64, f64, f64), TrainError>,
) -> Result<LoopOutput, LoopError> {
    let config = AdamConfig { lr: hyper.lr, weight_decay: hyper.weight_decay, ..Default::default() };
    let mut adam = Adam::new(config, model.params());
    let mut lr = hyper.lr;
    let mut curve = Vec::new();
    let mut best: Option<Checkpoint<T>> = None;
    let mut plateau_best: Option<f64> = None;
    let mut bad_epochs = 0;
    let mut epochs_run = 0;

    for epoch in 0..hyper.epochs {
        let loss = match step(model, &mut adam, epoch) {
            Ok(l) if l.is_finite() => l,
            Ok(l) => return Err(LoopError::Diverged { epoch, message: format!("loss is {l}"), curve }),
            Err(e) => match is_divergence(&e) {
                Some(message) => return Err(LoopError::Diverged { epoch, message, curve }),
                None => return Err(LoopError::Other(e.into())),
            },
        };
        let (train, val, val_loss) = match eval(model) {
            Ok(v) => v,
            Err(TrainError::Model(e)) if is_divergence(&e).is_some() => {
                return Err(LoopError::Diverged { epoch, message: is_divergence(&e).unwrap(), curve })
            }
            Err(e) => return Err(LoopError::Other(e)),
        };
        epochs_run = epoch + 1;
        curve.push(EpochRecord { epoch, loss, train_metric: train, val_metric: val, lr });

        let improved = match &best {
            None => true,
            Some(b) => metric.better(val, b.val) || (val == b.val && val_loss < b.val_loss),
        };
        if improved {
            best = Some(Checkpoint {
                epoch,
                train,
                val,
                val_loss,
                params: model.params().snapshot(),
                running: model.running_stats(),
            });
        }

        if plateau_best.is_none_or(|p| metric.better(val, p)) {
            plateau_best = Some(val);
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > hyper.lr_decay_patience && hyper.lr_decay_factor < 1.0 {
                lr *= hyper.lr_decay_factor;
                adam.set_lr(lr);
                bad_epochs = 0;
            }
        }
        let since_best = epoch - best.as_ref().map_or(epoch, |b| b.epoch);
        if hyper.early_stop_patience.is_some_and(|p| since_best >= p) {
            break;
        }
        if hyper.min_lr > 0.0 && lr < hyper.min_lr {
            break;
        }
    }

    let best = best.expect("at least one epoch ran");
    model.params_mut().restore(&best.params);
    model.set_running_stats(&best.running);
    Ok(LoopOutput { best_epoch: best.epoch, train: best.train, val: best.val, epochs_run, curve })
}

struct ReportBase {
    dataset: String,
    metric: Metric,
    params: ParamCounts,
    flops: u64,
    config: ModelConfig,
    hyper: TrainHyper,
    started: Instant,
}

impl ReportBase {
    fn finish(self, out: LoopOutput, test: f64) -> TrainReport {
        TrainReport {
            dataset: self.dataset,
            metric: self.metric,
            train_metric: out.train,
            val_metric: out.val,
            test_metric: test,
            best_epoch: out.best_epoch,
            epochs_run: out.epochs_run,
            curve: out.curve,
            params: self.params,
            flops: self.flops,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            seed: self.config.seed,
            config: self.config,
            hyper: self.hyper,
            mask_files: Vec::new(),
        }
    }

    fn fail(self, e: LoopError) -> TrainError {
        match e {
            LoopError::Other(e) => e,
            LoopError::Diverged { epoch, message, curve } => {
                let out = LoopOutput { best_epoch: epoch, train: f64::NAN, val: f64::NAN, epochs_run: epoch, curve };
                let report = self.finish(out, f64::NAN);
                TrainError::Diverged { epoch, message, report: Box::new(report) }
            }
        }
    }
}

fn prepare_graph<T: Scalar>(g: &Graph<f64>, hyper: &TrainHyper) -> Graph<T> {
    if hyper.row_normalize {
        g.row_normalized_features().cast()
    } else {
        g.cast()
    }
}

fn train_node<T: Scalar>(
    cfg: &ModelConfig,
    ds: &NodeDataset,
    hyper: &TrainHyper,
) -> Result<(TrainReport, Model<T>), TrainError> {
    let started = Instant::now();
    if cfg.task.is_graph_level() {
        return Err(TrainError::Mismatch(format!("task {} on a node-classification dataset", cfg.task)));
    }
    let classes = ds.meta.num_classes.unwrap_or(0);
    if cfg.output_dim != classes {
        return Err(TrainError::Mismatch(format!("output_dim {} but the dataset has {classes} classes", cfg.output_dim)));
    }
    let graph = prepare_graph::<T>(&ds.graph, hyper);
    let input = GraphInput::new(&graph, cfg.self_loops).map_err(ModelError::from)?;
    let labels = ds.labels().to_vec();
    let rows = |s| ds.split.indices(s);
    let (train_rows, val_rows, test_rows) = (rows(Split::Train), rows(Split::Val), rows(Split::Test));
    let train_labels = Arc::new(train_rows.iter().map(|&i| labels[i]).collect::<Vec<_>>());
    let train_rows_arc = Arc::new(train_rows.clone());

    let mut model = Model::<T>::build(cfg, graph.feature_dim())?;
    if cfg.family == Family::Pna {
        model.set_pna_delta(log_degree_mean(input.degrees(), train_rows.iter().copied()));
    }
    let base = ReportBase {
        dataset: ds.meta.name.clone(),
        metric: Metric::Accuracy,
        params: model.param_counts()?,
        flops: model.flop_estimate(&input),
        config: cfg.clone(),
        hyper: hyper.clone(),
        started,
    };

    let mut dropout_rng = substream(cfg.seed, Purpose::Dropout, 0);
    let step = |model: &mut Model<T>, adam: &mut Adam<T>, _epoch: usize| -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let mut state = TrainState::new(hyper.dropout, &mut dropout_rng);
        let out = model.forward(&mut tape, model.params(), &input, Some(&mut state))?;
        let stats = std::mem::take(&mut state.batch_stats);
        let picked = tape.gather_rows(out, Arc::clone(&train_rows_arc))?;
        let loss = tape.cross_entropy(picked, Arc::clone(&train_labels))?;
        let grads = tape.backward(loss)?;
        let store = model.params_mut();
        store.zero_grad();
        store.accumulate(&tape, &grads);
        adam.step(store);
        model.update_running_stats(&stats);
        Ok(tape.scalar(loss).to_f64_lossy())
    };
    let eval = |model: &Model<T>| -> Result<(f64, f64, f64), TrainError> {
        let pred = model.predict(&input)?;
        Ok((
            accuracy(&pred, &labels, &train_rows)?,
            accuracy(&pred, &labels, &val_rows)?,
            cross_entropy(&pred, &labels, &val_rows),
        ))
    };
    let out = match run_loop(&mut model, hyper, Metric::Accuracy, step, eval) {
        Ok(out) => out,
        Err(e) => return Err(base.fail(e)),
    };
    let test = evaluate_nodes(&model, &input, &labels, &test_rows)?;
    Ok((base.finish(out, test), model))
}

/// Evaluation-time batch over a subset of graphs, with its targets.
struct EvalSet<T> {
    input: GraphInput<T>,
    classes: Vec<usize>,
    values: Vec<f64>,
}

impl<T: Scalar> EvalSet<T> {
    fn new(graphs: &[Graph<T>], idx: &[usize], self_loops: bool) -> Result<Self, TrainError> {
        if idx.is_empty() {
            return Err(TrainError::EmptySplit("graph split"));
        }
        let batch = BatchedGraph::new(idx.iter().map(|&i| &graphs[i])).map_err(ModelError::from)?;
        let (classes, values) = targets(batch.member_labels());
        Ok(Self { input: GraphInput::from_batch(&batch, self_loops).map_err(ModelError::from)?, classes, values })
    }

    fn metric(&self, model: &Model<T>, metric: Metric) -> Result<(f64, f64), TrainError> {
        let pred = model.predict(&self.input)?;
        Ok(match metric {
            Metric::Accuracy => {
                let all: Vec<usize> = (0..self.classes.len()).collect();
                (accuracy(&pred, &self.classes, &all)?, cross_entropy(&pred, &self.classes, &all))
            }
            Metric::Mae => {
                let m = mean_absolute_error(&pred, &self.values)?;
                (m, m)
            }
        })
    }
}

fn targets(labels: &[Labels]) -> (Vec<usize>, Vec<f64>) {
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for l in labels {
        match l {
            Labels::GraphClass(c) => classes.push(*c),
            Labels::GraphValue(v) => values.push(*v),
            _ => {}
        }
    }
    (classes, values)
}

fn train_graph<T: Scalar>(
    cfg: &ModelConfig,
    ds: &GraphDataset,
    hyper: &TrainHyper,
    split: &GraphSplit,
) -> Result<(TrainReport, Model<T>), TrainError> {
    let started = Instant::now();
    if !cfg.task.is_graph_level() {
        return Err(TrainError::Mismatch("node-class model on a graph dataset".into()));
    }
    let metric = Metric::for_task(cfg.task);
    let dataset_is_classification = ds.classes().is_some();
    if dataset_is_classification != cfg.task.is_classification() {
        return Err(TrainError::Mismatch(format!("task {} does not match dataset {}", cfg.task, ds.meta.name)));
    }
    if let Some(k) = ds.meta.num_classes {
        if cfg.output_dim != k {
            return Err(TrainError::Mismatch(format!("output_dim {} but the dataset has {k} classes", cfg.output_dim)));
        }
    }
    let graphs: Vec<Graph<T>> = ds.graphs.iter().map(|g| prepare_graph(g, hyper)).collect();
    let train_set = EvalSet::new(&graphs, &split.train, cfg.self_loops)?;
    let val_set = EvalSet::new(&graphs, &split.val, cfg.self_loops)?;
    let test_set = EvalSet::new(&graphs, &split.test, cfg.self_loops)?;

    let mut model = Model::<T>::build(cfg, ds.meta.feature_dim)?;
    if cfg.family == Family::Pna {
        let n = train_set.input.num_nodes();
        model.set_pna_delta(log_degree_mean(train_set.input.degrees(), 0..n));
    }
    let base = ReportBase {
        dataset: ds.meta.name.clone(),
        metric,
        params: model.param_counts()?,
        flops: model.flop_estimate(&train_set.input),
        config: cfg.clone(),
        hyper: hyper.clone(),
        started,
    };

    let mut dropout_rng = substream(cfg.seed, Purpose::Dropout, 0);
    let mut order = split.train.clone();
    let step = |model: &mut Model<T>, adam: &mut Adam<T>, epoch: usize| -> Result<f64, ModelError> {
        order.shuffle(&mut substream(cfg.seed, Purpose::Shuffle, epoch as u64));
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch = BatchedGraph::new(chunk.iter().map(|&i| &graphs[i]))?;
            let input = GraphInput::from_batch(&batch, cfg.self_loops)?;
            let (classes, values) = targets(batch.member_labels());
            let mut tape = Tape::new();
            let mut state = TrainState::new(hyper.dropout, &mut dropout_rng);
            let out = model.forward(&mut tape, model.params(), &input, Some(&mut state))?;
            let stats = std::mem::take(&mut state.batch_stats);
            let loss = match metric {
                Metric::Accuracy => tape.cross_entropy(out, Arc::new(classes))?,
                Metric::Mae => {
                    let target = Array2::from_shape_vec((values.len(), 1), values).expect("one target per graph");
                    let target = target.mapv(T::of);
                    tape.mae(out, Arc::new(target))?
                }
            };
            let grads = tape.backward(loss)?;
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&tape, &grads);
            adam.step(store);
            model.update_running_stats(&stats);
            total += tape.scalar(loss).to_f64_lossy() * chunk.len() as f64;
        }
        Ok(total / order.len() as f64)
    };
    let eval = |model: &Model<T>| -> Result<(f64, f64, f64), TrainError> {
        let (train, _) = train_set.metric(model, metric)?;
        let (val, val_loss) = val_set.metric(model, metric)?;
        Ok((train, val, val_loss))
    };
    let out = match run_loop(&mut model, hyper, metric, step, eval) {
        Ok(out) => out,
        Err(e) => return Err(base.fail(e)),
    };
    let (test, _) = test_set.metric(&model, metric)?;
    Ok((base.finish(out, test), model))
}
