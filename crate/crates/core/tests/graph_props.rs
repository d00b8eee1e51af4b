mod common;

use common::{dense_a_hat, er_graph, max_abs_diff, random_permutation};
use expander_gnn::{block_diagonal_batch, Graph, Labels};
use ndarray::Array2;
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph<f64>> {
    (1usize..24, 0.0f64..1.0, any::<u64>()).prop_map(|(n, p, seed)| er_graph(n, p, 3, 2, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adjacency_is_symmetric(g in arb_graph()) {
        let a = g.adjacency();
        for (i, j, v) in a.iter() {
            prop_assert_eq!(a.get(j, i), v);
        }
        prop_assert_eq!(a.nnz(), 2 * g.num_edges());
    }

    #[test]
    fn normalisation_matches_dense_oracle(g in arb_graph()) {
        let a = g.normalize_adjacency(true).unwrap();
        prop_assert!(a.is_symmetric());
        for (_, _, v) in a.iter() {
            prop_assert!(v > 0.0 && v <= 1.0);
        }
        prop_assert!(max_abs_diff(&a.to_dense(), &dense_a_hat(&g, true)) < 1e-15);
    }

    #[test]
    fn normalisation_is_permutation_equivariant(g in arb_graph(), seed in any::<u64>()) {
        let n = g.num_nodes();
        let perm = random_permutation(n, seed);
        let a = g.normalize_adjacency(true).unwrap().to_dense();
        let b = g.permute_nodes(&perm).unwrap().normalize_adjacency(true).unwrap().to_dense();
        let moved = Array2::from_shape_fn((n, n), |(i, j)| {
            let (pi, pj) = (perm.iter().position(|&p| p == i).unwrap(), perm.iter().position(|&p| p == j).unwrap());
            a[[pi, pj]]
        });
        prop_assert!(max_abs_diff(&b, &moved) <= 1e-12);
    }

    #[test]
    fn permuted_degrees_follow_the_permutation(g in arb_graph(), seed in any::<u64>()) {
        let perm = random_permutation(g.num_nodes(), seed);
        let d = g.degrees();
        let dp = g.permute_nodes(&perm).unwrap().degrees();
        for i in 0..d.len() {
            prop_assert_eq!(dp[perm[i]], d[i]);
        }
    }

    #[test]
    fn batches_never_connect_members(gs in prop::collection::vec(arb_graph(), 1..5)) {
        let b = block_diagonal_batch(gs.iter()).unwrap();
        let total: usize = gs.iter().map(|g| g.num_nodes()).sum();
        prop_assert_eq!(b.graph().num_nodes(), total);
        prop_assert_eq!(b.graph().num_edges(), gs.iter().map(|g| g.num_edges()).sum::<usize>());
        let member = |i: usize| b.ranges().iter().position(|r| r.contains(&i)).unwrap();
        for &(u, v) in b.graph().edges() {
            prop_assert_eq!(member(u), member(v));
        }
        let mut next = 0;
        for r in b.ranges() {
            prop_assert_eq!(r.start, next);
            next = r.end;
        }
        prop_assert_eq!(next, total);
    }
}

#[test]
fn identity_permutation_is_a_no_op() {
    let g = er_graph(9, 0.4, 3, 2, 1);
    let id: Vec<usize> = (0..9).collect();
    assert_eq!(g.permute_nodes(&id).unwrap(), g);
}

#[test]
fn swapping_p2_swaps_feature_rows() {
    let g = Graph::new(2, &[(0, 1)], ndarray::array![[1.0, 2.0], [3.0, 4.0]], Labels::None).unwrap();
    let s = g.permute_nodes(&[1, 0]).unwrap();
    assert_eq!(s.features(), &ndarray::array![[3.0, 4.0], [1.0, 2.0]]);
    assert_eq!(s.edges(), g.edges());
}

#[test]
fn non_bijection_is_rejected() {
    let g = er_graph(3, 0.5, 1, 2, 0);
    assert!(g.permute_nodes(&[0, 0, 1]).is_err());
    assert!(g.permute_nodes(&[0, 1]).is_err());
}

#[test]
fn star_degrees() {
    let g = Graph::new(4, &[(0, 1), (0, 2), (0, 3)], Array2::<f64>::zeros((4, 1)), Labels::None).unwrap();
    assert_eq!(g.degrees(), vec![3, 1, 1, 1]);
}

#[test]
fn triangle_normalises_to_thirds() {
    let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], Array2::<f64>::zeros((3, 1)), Labels::None).unwrap();
    let a = g.normalize_adjacency(true).unwrap();
    assert_eq!(a.nnz(), 9);
    for (_, _, v) in a.iter() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}
