//! Oracles and generators shared by the integration tests. Everything here
//! is computed independently of the library's own code paths.

#![allow(dead_code)]

use expander_gnn::expander::ExpanderMask;
use expander_gnn::{Graph, Labels};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_0000)
}

/// Erdős–Rényi graph with uniform(−1, 1) features and random node labels.
pub fn er_graph(n: usize, p: f64, feature_dim: usize, classes: usize, seed: u64) -> Graph<f64> {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let x = Array2::from_shape_simple_fn((n, feature_dim), || r.random_range(-1.0..1.0));
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    Graph::new(n, &edges, x, Labels::Nodes(labels)).unwrap()
}

pub fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng(seed.wrapping_add(99)));
    perm
}

/// Dense `D^{-1/2}(A [+ I])D^{-1/2}` built from the edge list by hand.
pub fn dense_a_hat(g: &Graph<f64>, self_loops: bool) -> Array2<f64> {
    let n = g.num_nodes();
    let mut a = Array2::<f64>::zeros((n, n));
    for &(u, v) in g.edges() {
        a[[u, v]] = 1.0;
        a[[v, u]] = 1.0;
    }
    if self_loops {
        for i in 0..n {
            a[[i, i]] = 1.0;
        }
    }
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| if a[[i, j]] == 0.0 { 0.0 } else { 1.0 / (deg[i] * deg[j]).sqrt() })
}

/// Rows moved so that row `i` lands at `perm[i]`.
pub fn permute_rows(x: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (i, row) in x.rows().into_iter().enumerate() {
        out.row_mut(perm[i]).assign(&row);
    }
    out
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// The degree rule written out independently: `max(1, round(density · larger))`.
pub fn expected_degree(rows: usize, cols: usize, density: f64) -> usize {
    let larger = rows.max(cols) as f64;
    ((density * larger).round() as usize).max(1)
}

/// Every property a sampled mask must satisfy, checked against a dense
/// rendering of the pattern.
pub fn check_mask(m: &ExpanderMask, density: f64, batch_rows: usize) -> Result<(), String> {
    let (rows, cols) = (m.rows(), m.cols());
    let d = expected_degree(rows, cols, density);
    if m.degree() != d {
        return Err(format!("{rows}x{cols} @ {density}: degree {} != {d}", m.degree()));
    }
    let dense = m.to_dense::<f64>();
    let ones = dense.iter().filter(|&&v| v == 1.0).count();
    if dense.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err("non-binary mask entry".into());
    }
    let per_unit: Vec<usize> = if rows <= cols {
        dense.rows().into_iter().map(|r| r.sum() as usize).collect()
    } else {
        dense.columns().into_iter().map(|c| c.sum() as usize).collect()
    };
    if let Some(bad) = per_unit.iter().position(|&k| k != d) {
        return Err(format!("{rows}x{cols}: smaller-side unit {bad} has {} partners, expected {d}", per_unit[bad]));
    }
    for ps in m.partners() {
        if ps.windows(2).any(|w| w[0] >= w[1]) {
            return Err("partner list not strictly increasing".into());
        }
    }
    if ones != d * rows.min(cols) {
        return Err(format!("ones {ones} != d·min {}", d * rows.min(cols)));
    }
    // density · rows · cols = ones, compared as exact rationals: d/max and
    // ones/(rows·cols) are the same rational, and IEEE division rounds it
    // correctly, so the two quotients must be bitwise equal.
    if m.density() != ones as f64 / (rows * cols) as f64 {
        return Err(format!("density {} != ones/area {}/{}", m.density(), ones, rows * cols));
    }
    if (m.density() * (rows * cols) as f64).round() as usize != ones {
        return Err("density·area does not round to the ones count".into());
    }
    let diag = m.verify();
    if diag.collapsed {
        return Err("collapse flag set".into());
    }
    // Naive FLOP count of a masked matmul: one multiply and one add per
    // nonzero weight per batch row.
    let naive = 2 * batch_rows as u64 * ones as u64;
    if m.flops(batch_rows) != naive {
        return Err(format!("flops {} != naive {naive}", m.flops(batch_rows)));
    }
    Ok(())
}
