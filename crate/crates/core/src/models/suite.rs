//! Finite-difference gradient check of every model family and variant on a
//! small random graph.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{gradcheck_params, ParamStore, Tape};
use crate::graph::{Graph, Labels};
use crate::models::config::{Activation, Family, ModelConfig, Variant};
use crate::models::input::{log_degree_mean, GraphInput};
use crate::models::model::{Model, TrainState};
use crate::models::ModelError;
use crate::rng::{substream, Purpose};

pub const SUITE_NODES: usize = 6;
pub const SUITE_STEP: f64 = 1e-6;
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// The twelve message-passing combinations followed by SGC.
pub fn suite_combos() -> Vec<(Family, Variant)> {
    let mut out = Vec::new();
    for family in [Family::Gcn, Family::Gin, Family::Sage, Family::Pna] {
        for variant in [Variant::Vanilla, Variant::Expander, Variant::ActivationOnly] {
            out.push((family, variant));
        }
    }
    out.push((Family::Sgc, Variant::Vanilla));
    out
}

/// Random graph on `n` nodes (edge probability 1/2), features uniform in
/// `[-1, 1]` and random labels over `classes`.
pub fn random_graph(n: usize, feature_dim: usize, classes: usize, seed: u64) -> Graph<f64> {
    let mut rng = substream(seed, Purpose::Synth, 0);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.5 {
                edges.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_simple_fn((n, feature_dim), || rng.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Graph::new(n, &edges, x, Labels::Nodes(labels)).expect("valid random graph")
}

/// Config used by the suite: two layers, width 4, PReLU, batch norm and an
/// initial embedding (skipped by activation-only models), linear head.
pub fn suite_config(family: Family, variant: Variant, seed: u64) -> ModelConfig {
    let mut cfg = ModelConfig::new(family, variant, 2, 4, 3);
    cfg.seed = seed;
    if family != Family::Sgc {
        cfg.activation = Some(Activation::Prelu);
        cfg.batchnorm = true;
        cfg.use_initial_embedding = true;
    }
    if variant == Variant::Expander {
        cfg.density = Some(0.5);
    }
    cfg
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of the cross-entropy loss with respect to every trainable
/// parameter entry. `corrupt` is added to each analytic entry (test hook).
pub fn model_gradcheck(family: Family, variant: Variant, seed: u64, corrupt: f64) -> Result<f64, ModelError> {
    let cfg = suite_config(family, variant, seed);
    let graph = random_graph(SUITE_NODES, 3, 3, seed);
    let Labels::Nodes(labels) = graph.labels().clone() else { unreachable!() };
    let labels = Arc::new(labels);
    let input = GraphInput::new(&graph, cfg.self_loops)?;
    let mut model = Model::<f64>::build(&cfg, graph.feature_dim())?;
    model.set_pna_delta(log_degree_mean(input.degrees(), 0..SUITE_NODES));
    // Move parameters off their symmetric initial values (zero biases,
    // unit batch-norm scales) so no entry sits at a special point.
    let mut rng = substream(seed, Purpose::Init, u64::MAX);
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for id in ids {
        let v = model.params().get(id).value().mapv(|w| w + rng.random_range(-0.3..0.3));
        model.params_mut().set_value(id, v);
    }

    let loss = |tape: &mut Tape<f64>, store: &ParamStore<f64>| {
        let mut dropout_rng = substream(seed, Purpose::Dropout, 0);
        let mut state = TrainState::new(0.0, &mut dropout_rng);
        let out = model.forward(tape, store, &input, Some(&mut state)).map_err(|e| match e {
            ModelError::Autodiff(a) => a,
            other => panic!("unexpected model error during gradcheck: {other}"),
        })?;
        tape.cross_entropy(out, Arc::clone(&labels))
    };
    Ok(gradcheck_params(model.params(), loss, SUITE_STEP, corrupt)?)
}
