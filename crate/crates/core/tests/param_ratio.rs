//! Update-step parameter counts of expander models against density × the
//! vanilla count.

mod common;

use expander_gnn::{Family, GraphInput, Model, ModelConfig, Variant};
use proptest::prelude::*;

/// `(expander update count, vanilla update count, one d-unit summed over
/// every masked map)`.
fn counts(family: Family, layers: usize, s: usize, p: usize, density: f64, seed: u64) -> (f64, f64, f64) {
    let mut c = ModelConfig::new(family, Variant::Expander, layers, p, 3);
    c.density = Some(density);
    c.seed = seed;
    let model = Model::<f64>::build(&c, s).unwrap();
    let twin = Model::<f64>::build(&c.vanilla_twin(), s).unwrap();
    let unit: usize = model.masks().iter().map(|(_, m)| m.rows().min(m.cols())).sum();
    let e = model.param_counts().unwrap().update_step as f64;
    let v = twin.param_counts().unwrap().update_step as f64;
    (e, v, unit as f64)
}

fn family() -> impl Strategy<Value = Family> {
    prop_oneof![Just(Family::Gcn), Just(Family::Gin), Just(Family::Sage), Just(Family::Pna)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn update_count_tracks_density(
        f in family(),
        layers in 1usize..4,
        s in 1usize..40,
        p in 1usize..40,
        density in prop_oneof![Just(0.1), Just(0.5), Just(1.0), 0.01f64..=1.0],
        seed in any::<u64>(),
    ) {
        let (e, v, unit) = counts(f, layers, s, p, density, seed);
        prop_assert!((e - density * v).abs() <= unit, "{e} vs {} (slack {unit})", density * v);
        if density == 1.0 {
            prop_assert_eq!(e, v);
        }
    }
}

#[test]
fn citation_shapes() {
    for density in [0.1, 0.5, 1.0] {
        let (e, v, unit) = counts(Family::Gcn, 2, 1433, 256, density, 0);
        assert!((e - density * v).abs() <= unit, "density {density}: {e} vs {}", density * v);
        assert!((e / v - density).abs() < 0.01);
    }
}

#[test]
fn full_density_forward_is_bitwise_vanilla() {
    let g = common::er_graph(20, 0.2, 7, 3, 4);
    let input = GraphInput::new(&g, true).unwrap();
    for family in [Family::Gcn, Family::Gin, Family::Sage, Family::Pna] {
        let mut e = ModelConfig::new(family, Variant::Expander, 2, 12, 3);
        e.density = Some(1.0);
        e.seed = 9;
        let a = Model::<f64>::build(&e, 7).unwrap().predict(&input).unwrap();
        let b = Model::<f64>::build(&e.vanilla_twin(), 7).unwrap().predict(&input).unwrap();
        assert_eq!(a, b, "{family}");
    }
}
