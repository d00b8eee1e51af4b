//! Relabelling nodes permutes node outputs and leaves graph outputs alone;
//! batching graphs changes nothing per graph; SGC is a collapsed linear GCN.

mod common;

use expander_gnn::models::sgc_forward;
use expander_gnn::{Activation, BatchedGraph, Family, Graph, GraphInput, HeadKind, Labels, Model, ModelConfig, Task, Variant};
use ndarray::Array2;
use rand::Rng;

const FAMILIES: [Family; 4] = [Family::Gcn, Family::Gin, Family::Sage, Family::Pna];
const VARIANTS: [Variant; 3] = [Variant::Vanilla, Variant::Expander, Variant::ActivationOnly];

fn config(family: Family, variant: Variant, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(family, variant, 2, 8, 3);
    c.seed = seed;
    c.activation = Some(Activation::ALL[seed as usize % 3]);
    c.use_initial_embedding = seed.is_multiple_of(2);
    if variant == Variant::Expander {
        c.density = Some(0.4);
    }
    c
}

fn embed(model: &Model<f64>, g: &Graph<f64>) -> Array2<f64> {
    let input = GraphInput::new(g, true).unwrap();
    let mut tape = expander_gnn::Tape64::new();
    let out = model.embed(&mut tape, model.params(), &input, None).unwrap();
    tape.value(out).clone()
}

fn node_counts(seed: u64) -> usize {
    5 + common::rng(seed).random_range(0..10)
}

#[test]
fn layers_are_permutation_equivariant() {
    for seed in 0..50 {
        let n = node_counts(seed);
        let g = common::er_graph(n, 0.35, 4, 3, seed);
        let perm = common::random_permutation(n, seed);
        let pg = g.permute_nodes(&perm).unwrap();
        for family in FAMILIES {
            for variant in VARIANTS {
                let mut model = Model::<f64>::build(&config(family, variant, seed), 4).unwrap();
                model.set_pna_delta(0.9);
                let expected = common::permute_rows(&embed(&model, &g), &perm);
                let got = embed(&model, &pg);
                let d = common::max_abs_diff(&expected, &got);
                assert!(d < 1e-10, "{family} {variant} seed {seed}: {d:e}");
            }
        }
    }
}

#[test]
fn graph_outputs_are_permutation_invariant() {
    for seed in 0..50 {
        let n = node_counts(seed);
        let g = common::er_graph(n, 0.35, 4, 3, seed).with_labels(Labels::GraphClass(1));
        let perm = common::random_permutation(n, seed);
        let pg = g.permute_nodes(&perm).unwrap();
        for family in FAMILIES {
            for variant in VARIANTS {
                let mut c = config(family, variant, seed);
                c.task = Task::GraphClass;
                c.head = HeadKind::Mlp3;
                c.batchnorm = true;
                let mut model = Model::<f64>::build(&c, 4).unwrap();
                model.set_pna_delta(0.9);
                let a = model.predict(&GraphInput::new(&g, true).unwrap()).unwrap();
                let b = model.predict(&GraphInput::new(&pg, true).unwrap()).unwrap();
                let d = common::max_abs_diff(&a, &b);
                assert!(d < 1e-10, "{family} {variant} seed {seed}: {d:e}");
            }
        }
    }
}

#[test]
fn batching_matches_one_graph_at_a_time() {
    for seed in 0..10 {
        let graphs: Vec<Graph<f64>> = (0..4)
            .map(|i| common::er_graph(node_counts(seed * 10 + i), 0.4, 4, 2, seed * 10 + i).with_labels(Labels::GraphClass(0)))
            .collect();
        let batch = BatchedGraph::new(graphs.iter()).unwrap();
        let input = GraphInput::from_batch(&batch, true).unwrap();
        for family in FAMILIES {
            for variant in VARIANTS {
                let mut c = config(family, variant, seed);
                c.task = Task::GraphClass;
                c.batchnorm = true;
                let mut model = Model::<f64>::build(&c, 4).unwrap();
                model.set_pna_delta(1.1);
                let together = model.predict(&input).unwrap();
                assert_eq!(together.nrows(), 4);
                for (i, g) in graphs.iter().enumerate() {
                    let alone = model.predict(&GraphInput::new(g, true).unwrap()).unwrap();
                    let d = common::max_abs_diff(&alone, &together.slice(ndarray::s![i..i + 1, ..]).to_owned());
                    assert!(d < 1e-12, "{family} {variant} seed {seed} graph {i}: {d:e}");
                }
            }
        }
    }
}

#[test]
fn sgc_is_a_collapsed_linear_gcn() {
    for seed in 0..100 {
        let g = common::er_graph(8, 0.4, 3, 2, seed);
        let k = 1 + seed as usize % 3;
        // PReLU with slope 1 is the identity, so the GCN is linear.
        let mut c = ModelConfig::new(Family::Gcn, Variant::Vanilla, k, 3, 2);
        c.activation = Some(Activation::Prelu);
        c.seed = seed;
        let mut model = Model::<f64>::build(&c, 3).unwrap();
        let mut composite = Array2::<f64>::eye(3);
        for l in 0..k {
            let slope = model.params().find(&format!("layer{l}.prelu")).unwrap();
            model.params_mut().set_value(slope, ndarray::array![[1.0]]);
            let w = model.params().find(&format!("layer{l}.w")).unwrap();
            composite = composite.dot(model.params().get(w).value());
        }
        let gcn = embed(&model, &g);

        let input = GraphInput::new(&g, true).unwrap();
        let sgc = sgc_forward(&input, k, &composite).unwrap();

        let a = common::dense_a_hat(&g, true);
        let mut oracle = g.features().clone();
        for _ in 0..k {
            oracle = a.dot(&oracle);
        }
        let oracle = oracle.dot(&composite);

        assert!(common::max_abs_diff(&sgc, &oracle) < 1e-10, "seed {seed}");
        assert!(common::max_abs_diff(&gcn, &oracle) < 1e-10, "seed {seed}");
    }
}
