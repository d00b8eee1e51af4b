use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GraphDataset};
use crate::models::{Activation, ModelConfig};
use crate::rng::{substream, Purpose};
use crate::train::metrics::population_std;
use crate::train::run::{graph_strata, train, train_graph_split, GraphSplit};
use crate::train::{Metric, TrainError, TrainHyper, TrainReport};

/// Splits item indices into `k` folds, stratified by `strata` (one stratum
/// per item; pass all zeros for an unstratified split). Each stratum is
/// shuffled with its own substream and dealt round-robin, continuing from
/// the fold where the previous stratum stopped so fold sizes differ by at
/// most one.
pub fn stratified_folds(strata: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>, TrainError> {
    if k < 2 {
        return Err(TrainError::Hyper(format!("need at least 2 folds, got {k}")));
    }
    let classes = strata.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); classes];
    for (i, &s) in strata.iter().enumerate() {
        members[s].push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (class, mut items) in members.into_iter().enumerate() {
        if items.is_empty() {
            continue;
        }
        if items.len() < k {
            return Err(TrainError::SmallClass { class, count: items.len(), folds: k });
        }
        items.shuffle(&mut substream(seed, Purpose::Folds, class as u64));
        for i in items {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Fold `i` is the test set, fold `i + 1` (cyclically) validation, the rest
/// training.
pub(crate) fn fold_split(folds: &[Vec<usize>], i: usize) -> GraphSplit {
    let k = folds.len();
    let val = (i + 1) % k;
    let mut train: Vec<usize> = (0..k).filter(|&f| f != i && f != val).flat_map(|f| folds[f].iter().copied()).collect();
    train.sort_unstable();
    GraphSplit { train, val: folds[val].clone(), test: folds[i].clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: Metric,
    pub mean: f64,
    /// Population standard deviation across folds.
    pub std: f64,
    pub fold_metrics: Vec<f64>,
    pub reports: Vec<TrainReport>,
}

/// `k`-fold cross-validation on a graph dataset. Every fold trains with
/// `cfg.seed`; the folds come from the same seed.
pub fn cross_validate(
    cfg: &ModelConfig,
    ds: &GraphDataset,
    hyper: &TrainHyper,
    k: usize,
    jobs: usize,
) -> Result<CvReport, TrainError> {
    hyper.validate()?;
    cfg.validate()?;
    let folds = stratified_folds(&graph_strata(ds), k, cfg.seed)?;
    let results = run_jobs(jobs, (0..k).collect(), |i| train_graph_split(cfg, ds, hyper, &fold_split(&folds, i)));
    let mut reports = Vec::with_capacity(k);
    for r in results {
        reports.push(r?.report);
    }
    let fold_metrics: Vec<f64> = reports.iter().map(|r| r.test_metric).collect();
    let (mean, std) = population_std(&fold_metrics);
    Ok(CvReport { metric: Metric::for_task(cfg.task), mean, std, fold_metrics, reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub selected: Activation,
    /// One report per activation, in tie-break order.
    pub reports: Vec<(Activation, TrainReport)>,
}

impl SweepReport {
    pub fn selected_report(&self) -> &TrainReport {
        &self.reports.iter().find(|(a, _)| *a == self.selected).expect("selected activation was trained").1
    }
}

/// Trains one model per activation and keeps the best on validation.
/// Ties go to relu, then prelu, then tanh.
pub fn activation_sweep(
    cfg: &ModelConfig,
    dataset: &Dataset,
    hyper: &TrainHyper,
    seed: u64,
    jobs: usize,
) -> Result<SweepReport, TrainError> {
    let results = run_jobs(jobs, Activation::ALL.to_vec(), |a| {
        let mut c = cfg.clone();
        c.activation = Some(a);
        train(&c, dataset, hyper, seed).map(|o| (a, o.report))
    });
    let mut reports = Vec::with_capacity(results.len());
    for r in results {
        reports.push(r?);
    }
    let mut best = 0;
    for (i, (_, r)) in reports.iter().enumerate() {
        if r.metric.better(r.val_metric, reports[best].1.val_metric) {
            best = i;
        }
    }
    Ok(SweepReport { selected: reports[best].0, reports })
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
pub fn run_jobs<I, R, F>(jobs: usize, items: Vec<I>, f: F) -> Vec<R>
where
    I: Send,
    R: Send,
    F: Fn(I) -> R + Sync,
{
    let n = items.len();
    let workers = jobs.max(1).min(n);
    if workers <= 1 {
        return items.into_iter().map(f).collect();
    }
    let queue: Vec<Mutex<Option<I>>> = items.into_iter().map(|i| Mutex::new(Some(i))).collect();
    let results: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let item = queue[i].lock().unwrap().take().expect("each item is taken once");
                let r = f(item);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().unwrap().expect("every job ran")).collect()
}
