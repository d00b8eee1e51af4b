//! Model construction, forward passes and parameter accounting.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::param::{glorot_limit, uniform_matrix};
use crate::autodiff::{BatchStats, Extreme, ParamId, ParamRole, ParamStore, Tape, Var};
use crate::expander::ExpanderMask;
use crate::models::config::{Activation, Family, HeadKind, ModelConfig, Variant};
use crate::models::input::GraphInput;
use crate::models::ModelError;
use crate::rng::{derive_seed, substream, Purpose};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const PRELU_INIT: f64 = 0.25;
const STD_EPS: f64 = 1e-8;
const NORM_EPS: f64 = 1e-12;

/// Per-pass training context: dropout and the batch statistics collected
/// by batch-norm layers (in layer order).
pub struct TrainState<'a, T> {
    pub dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
    pub batch_stats: Vec<BatchStats<T>>,
}

impl<'a, T> TrainState<'a, T> {
    pub fn new(dropout: f64, rng: &'a mut ChaCha8Rng) -> Self {
        Self { dropout, rng, batch_stats: Vec::new() }
    }
}

#[derive(Debug, Clone, Default)]
struct Layer {
    /// `[W]` for gcn/gin/pna, `[W1, W2]` for sage, empty for activation-only.
    weights: Vec<ParamId>,
    eps: Option<ParamId>,
    slope: Option<ParamId>,
    norm: Option<(ParamId, ParamId)>,
}

#[derive(Debug, Clone)]
struct RunningStats<T> {
    mean: Array1<T>,
    var: Array1<T>,
}

/// Trainable-parameter inventory. Masked parameters count in-mask entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub total: usize,
    pub embedding: usize,
    pub update_step: usize,
    pub aggregation: usize,
    pub head: usize,
    pub norm_act: usize,
    /// `total` over the vanilla twin's `total`.
    pub ratio_vs_vanilla: f64,
    /// `update_step` over the vanilla twin's `update_step`.
    pub update_ratio_vs_vanilla: f64,
}

/// Node or graph state before the first layer: the raw input features are
/// kept symbolic so the first linear map can use their sparse form.
#[derive(Clone, Copy)]
enum Hidden {
    Raw,
    Node(Var),
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    input_dim: usize,
    params: ParamStore<T>,
    embedding: Option<ParamId>,
    layers: Vec<Layer>,
    head: Vec<(ParamId, ParamId)>,
    running: Vec<RunningStats<T>>,
    width: usize,
    pna_delta: f64,
}

struct Builder<'c, T> {
    cfg: &'c ModelConfig,
    store: ParamStore<T>,
    masks: u64,
}

impl<T: Scalar> Builder<'_, T> {
    fn init_rng(&self) -> ChaCha8Rng {
        substream(self.cfg.seed, Purpose::Init, self.store.len() as u64)
    }

    fn dense(&mut self, name: String, role: ParamRole, rows: usize, cols: usize) -> ParamId {
        let limit = glorot_limit(rows as f64, cols as f64);
        let value = uniform_matrix(rows, cols, limit, &mut self.init_rng());
        self.store.add(name, role, value)
    }

    /// Update-step linear map; expander variants get a fresh mask and a
    /// Glorot bound computed from the masked per-unit degrees.
    fn update(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId, ModelError> {
        match (self.cfg.variant, self.cfg.density) {
            (Variant::Expander, Some(density)) => {
                let seed = derive_seed(self.cfg.seed, Purpose::Mask, self.masks);
                self.masks += 1;
                let mask = ExpanderMask::sample(rows, cols, density, seed)?;
                let ones = mask.ones() as f64;
                let limit = glorot_limit(ones / cols as f64, ones / rows as f64);
                let value = uniform_matrix(rows, cols, limit, &mut self.init_rng());
                Ok(self.store.add_masked(name, ParamRole::Update, value, mask))
            }
            _ => Ok(self.dense(name, ParamRole::Update, rows, cols)),
        }
    }

    fn filled(&mut self, name: String, role: ParamRole, cols: usize, v: f64) -> ParamId {
        self.store.add(name, role, Array2::from_elem((1, cols), T::of(v)))
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model for inputs of width `input_dim`. Deterministic given
    /// `cfg.seed`: masks and initial values come from separate substreams,
    /// and initial values are indexed by parameter position, so an expander
    /// model at density 1 starts from exactly the vanilla weights.
    pub fn build(cfg: &ModelConfig, input_dim: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(ModelError::Config("input feature dimension must be at least 1".into()));
        }
        let p = cfg.hidden;
        let mut b = Builder { cfg, store: ParamStore::new(), masks: 0 };
        let mut width = input_dim;
        let mut embedding = None;
        if cfg.has_embedding() {
            embedding = Some(b.dense("embedding".into(), ParamRole::Embedding, input_dim, p));
            width = p;
        }

        let mut layers = Vec::new();
        let mut running = Vec::new();
        if cfg.family != Family::Sgc {
            for l in 0..cfg.layers {
                let mut layer = Layer::default();
                if cfg.variant != Variant::ActivationOnly {
                    match cfg.family {
                        Family::Gcn | Family::Gin => layer.weights.push(b.update(format!("layer{l}.w"), width, p)?),
                        Family::Sage => {
                            layer.weights.push(b.update(format!("layer{l}.w1"), width, width)?);
                            layer.weights.push(b.update(format!("layer{l}.w2"), 2 * width, p)?);
                        }
                        Family::Pna => layer.weights.push(b.update(format!("layer{l}.w"), 12 * width, p)?),
                        Family::Sgc => unreachable!(),
                    }
                    width = p;
                }
                if cfg.family == Family::Gin {
                    layer.eps = Some(b.filled(format!("layer{l}.eps"), ParamRole::Aggregation, 1, 0.0));
                }
                if cfg.activation() == Activation::Prelu {
                    layer.slope = Some(b.filled(format!("layer{l}.prelu"), ParamRole::NormAct, 1, PRELU_INIT));
                }
                if cfg.batchnorm {
                    let gamma = b.filled(format!("layer{l}.bn_gamma"), ParamRole::NormAct, width, 1.0);
                    let beta = b.filled(format!("layer{l}.bn_beta"), ParamRole::NormAct, width, 0.0);
                    layer.norm = Some((gamma, beta));
                    running.push(RunningStats { mean: Array1::zeros(width), var: Array1::ones(width) });
                }
                layers.push(layer);
            }
        }

        let dims = match cfg.head {
            HeadKind::Linear => vec![width, cfg.output_dim],
            HeadKind::Mlp3 => {
                if !width.is_multiple_of(4) {
                    return Err(ModelError::Config(format!("mlp3 head needs a width divisible by 4, got {width}")));
                }
                vec![width, width / 2, width / 4, cfg.output_dim]
            }
        };
        let mut head = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            let w = b.dense(format!("head{i}.w"), ParamRole::Head, pair[0], pair[1]);
            let bias = b.filled(format!("head{i}.b"), ParamRole::Head, pair[1], 0.0);
            head.push((w, bias));
        }

        Ok(Self {
            config: cfg.clone(),
            input_dim,
            params: b.store,
            embedding,
            layers,
            head,
            running,
            width,
            pna_delta: std::f64::consts::LN_2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Width of node states entering the readout / head.
    pub fn state_width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn masks(&self) -> Vec<(&str, &ExpanderMask)> {
        self.params.iter().filter_map(|(_, p)| p.expander_mask().map(|m| (p.name(), m))).collect()
    }

    pub fn pna_delta(&self) -> f64 {
        self.pna_delta
    }

    /// Sets PNA's δ; non-positive values (no training node has a
    /// neighbour) fall back to `ln 2`.
    pub fn set_pna_delta(&mut self, delta: f64) {
        self.pna_delta = if delta > 0.0 && delta.is_finite() { delta } else { std::f64::consts::LN_2 };
    }

    /// Batch-norm running statistics per normalised layer, as `(mean, var)`.
    pub fn running_stats(&self) -> Vec<(Array1<T>, Array1<T>)> {
        self.running.iter().map(|r| (r.mean.clone(), r.var.clone())).collect()
    }

    pub fn set_running_stats(&mut self, stats: &[(Array1<T>, Array1<T>)]) {
        for (r, (m, v)) in self.running.iter_mut().zip(stats) {
            r.mean.assign(m);
            r.var.assign(v);
        }
    }

    /// Folds the batch statistics of one training pass into the running
    /// estimates (momentum 0.1, unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let m = T::of(BN_MOMENTUM);
        for (r, s) in self.running.iter_mut().zip(stats) {
            let n = s.rows as f64;
            let unbias = T::of(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
            r.mean.zip_mut_with(&s.mean, |a, &b| *a = (T::one() - m) * *a + m * b);
            r.var.zip_mut_with(&s.var, |a, &b| *a = (T::one() - m) * *a + m * b * unbias);
        }
    }

    /// Node states after the last message-passing layer (before readout and
    /// head). `train = None` runs in evaluation mode.
    pub fn embed(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        if input.feature_dim() != self.input_dim {
            return Err(ModelError::Config(format!(
                "model expects {} input features, graph has {}",
                self.input_dim,
                input.feature_dim()
            )));
        }
        if self.config.family == Family::Sgc {
            return Ok(tape.constant_shared(input.propagated(self.config.layers))?);
        }
        // A prefix with no parameters (activation-only with a fixed
        // activation) is a pure function of the input, so it is computed once.
        let key = self.frozen_key();
        if let Some(hit) = input.frozen(&key) {
            return Ok(tape.constant_shared(hit)?);
        }
        let out = self.embed_layers(tape, store, input, train)?;
        if !tape.requires_grad(out) {
            input.freeze(key, tape.value_shared(out));
        }
        Ok(out)
    }

    fn frozen_key(&self) -> String {
        let mut cfg = self.config.clone();
        cfg.seed = 0;
        format!("{}|{}", cfg.to_json(), self.pna_delta)
    }

    fn embed_layers(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        mut train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        let mut h = Hidden::Raw;
        if let Some(id) = self.embedding {
            let w = tape.param(store, id)?;
            h = Hidden::Node(self.linear(tape, input, h, w, train.as_deref_mut())?);
        }
        let mut norm_index = 0;
        for layer in &self.layers {
            let out = match self.config.family {
                Family::Gcn => self.gcn(tape, store, input, h, layer, train.as_deref_mut())?,
                Family::Gin => self.gin(tape, store, input, h, layer, train.as_deref_mut())?,
                Family::Sage => self.sage(tape, store, input, h, layer, train.as_deref_mut())?,
                Family::Pna => self.pna(tape, store, input, h, layer, train.as_deref_mut())?,
                Family::Sgc => unreachable!(),
            };
            let out = match layer.norm {
                Some((g, b)) => {
                    let (g, b) = (tape.param(store, g)?, tape.param(store, b)?);
                    let eps = T::of(BN_EPS);
                    match train.as_deref_mut() {
                        Some(state) => {
                            let (v, stats) = tape.batch_norm_train(out, g, b, eps)?;
                            state.batch_stats.push(stats);
                            v
                        }
                        None => {
                            let r = &self.running[norm_index];
                            tape.batch_norm_eval(out, g, b, &r.mean, &r.var, eps)?
                        }
                    }
                }
                None => out,
            };
            if layer.norm.is_some() {
                norm_index += 1;
            }
            h = Hidden::Node(out);
        }
        self.materialize(tape, input, h)
    }

    /// Full forward pass: node logits for node tasks, one row per readout
    /// range for graph tasks.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        mut train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        let h = self.embed(tape, store, input, train.as_deref_mut())?;
        let mut x = if self.config.task.is_graph_level() {
            tape.segment_mean(h, Arc::clone(input.ranges()))?
        } else {
            h
        };
        for (i, &(w, b)) in self.head.iter().enumerate() {
            if i == 0 {
                x = self.dropout(tape, x, train.as_deref_mut())?;
            }
            let (w, b) = (tape.param(store, w)?, tape.param(store, b)?);
            let z = tape.matmul(x, w)?;
            x = tape.add_row(z, b)?;
            if i + 1 < self.head.len() {
                x = tape.relu(x)?;
            }
        }
        Ok(x)
    }

    /// Evaluation-mode output as a plain matrix.
    pub fn predict(&self, input: &GraphInput<T>) -> Result<Array2<T>, ModelError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &self.params, input, None)?;
        Ok(tape.value(out).clone())
    }

    fn materialize(&self, tape: &mut Tape<T>, input: &GraphInput<T>, h: Hidden) -> Result<Var, ModelError> {
        Ok(match h {
            Hidden::Raw => tape.constant_shared(Arc::clone(input.features()))?,
            Hidden::Node(v) => v,
        })
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, train: Option<&mut TrainState<'_, T>>) -> Result<Var, ModelError> {
        let Some(state) = train else { return Ok(x) };
        if state.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - state.dropout;
        let scale = T::of(1.0 / keep);
        let (r, c) = tape.shape(x);
        let mask = Array2::from_shape_simple_fn((r, c), || {
            if state.rng.random::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        });
        Ok(tape.mul_const(x, Arc::new(mask))?)
    }

    /// `dropout(h) · w`, using the sparse feature matrix for raw input.
    fn linear(
        &self,
        tape: &mut Tape<T>,
        input: &GraphInput<T>,
        h: Hidden,
        w: Var,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        match h {
            Hidden::Raw => {
                let x = match train {
                    Some(state) if state.dropout > 0.0 => Arc::new(drop_sparse(input.features_csr(), state)),
                    _ => Arc::clone(input.features_csr()),
                };
                Ok(tape.spmm(&x, w)?)
            }
            Hidden::Node(v) => {
                let v = self.dropout(tape, v, train)?;
                Ok(tape.matmul(v, w)?)
            }
        }
    }

    fn activate(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, layer: &Layer) -> Result<Var, ModelError> {
        Ok(match self.config.activation() {
            Activation::Relu => tape.relu(x)?,
            Activation::Tanh => tape.tanh(x)?,
            Activation::Prelu => {
                let slope = tape.param(store, layer.slope.expect("prelu layers carry a slope"))?;
                tape.prelu(x, slope)?
            }
        })
    }

    fn gcn(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        h: Hidden,
        layer: &Layer,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        let m = match layer.weights.first() {
            Some(&w) => {
                let w = tape.param(store, w)?;
                let z = self.linear(tape, input, h, w, train)?;
                tape.spmm(input.a_hat(), z)?
            }
            None => {
                let h = self.materialize(tape, input, h)?;
                tape.spmm(input.a_hat(), h)?
            }
        };
        self.activate(tape, store, m, layer)
    }

    fn gin(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        h: Hidden,
        layer: &Layer,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        // (1+ε)h + Σ_j h_j, applied after the linear map when there is one
        // (both are linear in h).
        let z = match layer.weights.first() {
            Some(&w) => {
                let w = tape.param(store, w)?;
                self.linear(tape, input, h, w, train)?
            }
            None => self.materialize(tape, input, h)?,
        };
        let eps = tape.param(store, layer.eps.expect("gin layers carry epsilon"))?;
        let own = tape.scale_by(z, eps)?;
        let own = tape.add(z, own)?;
        let nbr = tape.spmm(input.adjacency(), z)?;
        let m = tape.add(own, nbr)?;
        self.activate(tape, store, m, layer)
    }

    fn sage(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        h: Hidden,
        layer: &Layer,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        let h = self.materialize(tape, input, h)?;
        let z = match layer.weights.as_slice() {
            &[w1, w2] => {
                let h = self.dropout(tape, h, train)?;
                let w1 = tape.param(store, w1)?;
                let t = tape.matmul(h, w1)?;
                let t = self.activate(tape, store, t, layer)?;
                let nbr = tape.neighbor_extreme(input.adjacency(), t, Extreme::Max)?;
                let m = tape.concat_cols(&[h, nbr])?;
                let w2 = tape.param(store, w2)?;
                let z = tape.matmul(m, w2)?;
                self.activate(tape, store, z, layer)?
            }
            _ => {
                let t = self.activate(tape, store, h, layer)?;
                let nbr = tape.neighbor_extreme(input.adjacency(), t, Extreme::Max)?;
                let m = tape.add(h, nbr)?;
                self.activate(tape, store, m, layer)?
            }
        };
        Ok(tape.row_l2_normalize(z, T::of(NORM_EPS))?)
    }

    fn pna(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: &GraphInput<T>,
        h: Hidden,
        layer: &Layer,
        train: Option<&mut TrainState<'_, T>>,
    ) -> Result<Var, ModelError> {
        let h = self.materialize(tape, input, h)?;
        let h = match layer.weights.first() {
            Some(_) => self.dropout(tape, h, train)?,
            None => h,
        };
        let aggregates = pna_aggregates(tape, input, h)?;
        let delta = self.pna_delta;
        let log_deg: Vec<f64> = input.degrees().iter().map(|&d| (d.max(1) as f64 + 1.0).ln()).collect();
        let amplification: Arc<Vec<T>> = Arc::new(log_deg.iter().map(|&l| T::of(l / delta)).collect());
        let attenuation: Arc<Vec<T>> = Arc::new(log_deg.iter().map(|&l| T::of(delta / l)).collect());
        let m = match layer.weights.first() {
            Some(&w) => {
                let mut blocks = aggregates.to_vec();
                for scaler in [&amplification, &attenuation] {
                    for &a in &aggregates {
                        blocks.push(tape.row_scale(a, Arc::clone(scaler))?);
                    }
                }
                let m = tape.concat_cols(&blocks)?;
                let w = tape.param(store, w)?;
                tape.matmul(m, w)?
            }
            None => {
                // Mean of the 12 (scaler, aggregator) blocks.
                let mut sum = aggregates[0];
                for &a in &aggregates[1..] {
                    sum = tape.add(sum, a)?;
                }
                let factor: Vec<T> = (0..input.num_nodes())
                    .map(|i| (T::one() + amplification[i] + attenuation[i]) / T::of(12.0))
                    .collect();
                tape.row_scale(sum, Arc::new(factor))?
            }
        };
        self.activate(tape, store, m, layer)
    }

    /// Parameter inventory with ratios against the vanilla twin.
    pub fn param_counts(&self) -> Result<ParamCounts, ModelError> {
        let mut counts = self.raw_counts();
        let twin = if self.config.variant == Variant::Vanilla && self.config.family != Family::Sgc {
            counts
        } else {
            Model::<T>::build(&self.config.vanilla_twin(), self.input_dim)?.raw_counts()
        };
        counts.ratio_vs_vanilla = counts.total as f64 / twin.total as f64;
        counts.update_ratio_vs_vanilla = counts.update_step as f64 / twin.update_step as f64;
        Ok(counts)
    }

    fn raw_counts(&self) -> ParamCounts {
        let p = &self.params;
        ParamCounts {
            total: p.count(),
            embedding: p.count_role(ParamRole::Embedding),
            update_step: p.count_role(ParamRole::Update),
            aggregation: p.count_role(ParamRole::Aggregation),
            head: p.count_role(ParamRole::Head),
            norm_act: p.count_role(ParamRole::NormAct),
            ratio_vs_vanilla: 1.0,
            update_ratio_vs_vanilla: 1.0,
        }
    }

    /// FLOPs of one forward pass over `input`: two per multiply-add in every
    /// linear map (masked maps counted as `2·n·d·min(|S1|,|S2|)`) and in every
    /// sparse aggregation product.
    pub fn flop_estimate(&self, input: &GraphInput<T>) -> u64 {
        let n = input.num_nodes() as u64;
        let nnz_hat = input.a_hat().nnz() as u64;
        let nnz_adj = input.adjacency().nnz() as u64;
        let mut flops = 0u64;
        let mut width = self.input_dim as u64;
        if self.config.family == Family::Sgc {
            flops += 2 * nnz_hat * width * self.config.layers as u64;
        }
        for (_, p) in self.params.iter() {
            let (rows, cols) = p.value().dim();
            if rows == 1 && matches!(p.role(), ParamRole::Head | ParamRole::NormAct | ParamRole::Aggregation) {
                continue;
            }
            let batch = if p.role() == ParamRole::Head && self.config.task.is_graph_level() {
                input.ranges().len() as u64
            } else {
                n
            };
            flops += match p.expander_mask() {
                Some(m) => m.flops(batch as usize),
                None => 2 * batch * rows as u64 * cols as u64,
            };
        }
        if self.embedding.is_some() {
            width = self.config.hidden as u64;
        }
        for layer in &self.layers {
            let agg_width = if layer.weights.is_empty() { width } else { self.config.hidden as u64 };
            flops += match self.config.family {
                Family::Gcn => 2 * nnz_hat * agg_width,
                Family::Gin => 2 * nnz_adj * agg_width,
                Family::Sage | Family::Pna => 2 * nnz_adj * width * 4,
                Family::Sgc => 0,
            };
            if !layer.weights.is_empty() {
                width = self.config.hidden as u64;
            }
        }
        flops
    }
}

/// Neighbourhood mean, max, min and standard deviation of `h`.
fn pna_aggregates<T: Scalar>(tape: &mut Tape<T>, input: &GraphInput<T>, h: Var) -> Result<[Var; 4], ModelError> {
    let mean = tape.spmm(input.mean_adjacency(), h)?;
    let max = tape.neighbor_extreme(input.adjacency(), h, Extreme::Max)?;
    let min = tape.neighbor_extreme(input.adjacency(), h, Extreme::Min)?;
    // Centred second moment per stored edge, averaged back into each node.
    let src = tape.gather_rows(h, Arc::clone(input.entry_cols()))?;
    let centre = tape.gather_rows(mean, Arc::clone(input.entry_rows()))?;
    let diff = tape.sub(src, centre)?;
    let sq = tape.mul(diff, diff)?;
    let var = tape.spmm(input.entry_mean(), sq)?;
    let var = tape.add_scalar(var, T::of(STD_EPS))?;
    let std = tape.sqrt(var)?;
    Ok([mean, max, min, std])
}

fn drop_sparse<T: Scalar>(x: &SparseMatrix<T>, state: &mut TrainState<'_, T>) -> SparseMatrix<T> {
    let keep = 1.0 - state.dropout;
    let scale = T::of(1.0 / keep);
    let values = x
        .values()
        .iter()
        .map(|&v| if state.rng.random::<f64>() < keep { v * scale } else { T::zero() })
        .collect();
    SparseMatrix::new(x.nrows(), x.ncols(), x.row_offsets().to_vec(), x.col_indices().to_vec(), values)
        .expect("pattern unchanged")
}
