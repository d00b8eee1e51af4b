//! Training, evaluation, cross-validation, activation sweeps and report
//! rendering.

mod cv;
mod metrics;
mod run;
mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DataError;
use crate::models::{Family, ModelConfig, ModelError, ParamCounts, Task, Variant};
use crate::scalar::Precision;

pub use cv::{activation_sweep, cross_validate, run_jobs, stratified_folds, CvReport, SweepReport};
pub use metrics::{accuracy, mean_absolute_error, population_std};
pub use run::{evaluate_nodes, train, train_graph_split, GraphSplit, TrainOutcome, TrainedModel};
pub use table::{render_table, TableRow};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("dataset does not fit the model: {0}")]
    Mismatch(String),
    #[error("{0}: empty split")]
    EmptySplit(&'static str),
    #[error("class {class} has {count} graphs, fewer than {folds} folds")]
    SmallClass { class: usize, count: usize, folds: usize },
    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String, report: Box<TrainReport> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Multiplier applied when the validation metric plateaus; 1 disables decay.
    pub lr_decay_factor: f64,
    /// Epochs without validation improvement tolerated before decaying.
    pub lr_decay_patience: usize,
    /// Training stops once the learning rate falls below this (0 disables).
    pub min_lr: f64,
    /// Training stops after this many epochs without a new best checkpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop_patience: Option<usize>,
    pub batch_size: usize,
    pub dropout: f64,
    /// Scale each node's feature row to unit L1 norm before training.
    pub row_normalize: bool,
    pub precision: Precision,
}

impl TrainHyper {
    /// Defaults for a model config: citation-style settings for node tasks,
    /// mini-batch settings for graph tasks.
    pub fn defaults_for(cfg: &ModelConfig) -> Self {
        if cfg.task.is_graph_level() {
            return Self {
                epochs: 200,
                lr: 1e-3,
                weight_decay: 0.0,
                lr_decay_factor: 0.5,
                lr_decay_patience: 10,
                min_lr: 1e-5,
                early_stop_patience: None,
                batch_size: 32,
                dropout: 0.0,
                row_normalize: false,
                precision: Precision::F64,
            };
        }
        let linear_only = cfg.family == Family::Sgc || cfg.variant == Variant::ActivationOnly;
        Self {
            epochs: 200,
            lr: if linear_only { 0.2 } else { 0.01 },
            weight_decay: 5e-4,
            lr_decay_factor: 1.0,
            lr_decay_patience: 10,
            min_lr: 0.0,
            early_stop_patience: None,
            batch_size: 32,
            dropout: if linear_only { 0.0 } else { 0.5 },
            row_normalize: true,
            precision: Precision::F64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Hyper(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad(format!("lr decay factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Mae,
}

impl Metric {
    pub fn for_task(task: Task) -> Self {
        if task.is_classification() {
            Metric::Accuracy
        } else {
            Metric::Mae
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Metric::Accuracy => a > b,
            Metric::Mae => a < b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_metric: f64,
    pub val_metric: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: String,
    pub metric: Metric,
    pub train_metric: f64,
    pub val_metric: f64,
    /// Evaluated once, at the best-validation checkpoint.
    pub test_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub curve: Vec<EpochRecord>,
    pub params: ParamCounts,
    pub flops: u64,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config: ModelConfig,
    pub hyper: TrainHyper,
    #[serde(default)]
    pub mask_files: Vec<String>,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `test=<metric> params=<n> ratio=<r>`.
    pub fn summary_line(&self) -> String {
        format!(
            "test={:.4} params={} ratio={:.4}",
            self.test_metric, self.params.total, self.params.ratio_vs_vanilla
        )
    }
}
