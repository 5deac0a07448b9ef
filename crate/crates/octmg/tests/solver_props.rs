mod common;

use common::*;
use octmg::cycle::{precondition, CycleScratch};
use octmg::operator::{apply_composite, assemble_coeffs, classify_cells};
use octmg::oracle::{assemble_dense_composite, dense_solve, DEFAULT_CAP};
use octmg::pcg::dot;
use octmg::{
    pcg_solve, AdaptiveGrid, BoundaryPolicy, CycleConfig, Field, Hierarchy, HierarchyConfig, SceneSdf, Shape,
    SolveConfig, Wall,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn random_leaf_field(h: &Hierarchy<f64>, seed: u64) -> Field<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    leaf_field(h, |_| rng.gen_range(-1.0..1.0))
}

fn apply_m(h: &Hierarchy<f64>, cfg: &CycleConfig, r: &Field<f64>) -> Field<f64> {
    let mut s = CycleScratch::new(h);
    let mut z = h.new_field();
    precondition(h, cfg, &mut s, r, &mut z);
    z
}

fn leaf_max_abs(h: &Hierarchy<f64>, f: &Field<f64>) -> f64 {
    h.leaf_slots()
        .iter()
        .flat_map(|&(l, s)| {
            let lo = s as usize * octmg::grid::TILE_CELLS;
            f.levels[l as usize][lo..lo + octmg::grid::TILE_CELLS].iter()
        })
        .fold(0.0, |m, v| m.max(v.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cycle_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, mu in 1u32..3, random_areas in any::<bool>()) {
        let h = if random_areas {
            hierarchy_with_random_areas(three_level_cube(), Wall::Dirichlet, seed % 7)
        } else {
            hierarchy(three_level_cube(), Wall::Dirichlet)
        };
        let cfg = CycleConfig { mu, ..Default::default() };
        let r1 = random_leaf_field(&h, seed);
        let r2 = random_leaf_field(&h, seed ^ 0x5555);
        let mut r = r1.clone();
        for (x, y) in r.levels.iter_mut().flatten().zip(r2.levels.iter().flatten()) {
            *x += a * y;
        }
        let (z, z1, z2) = (apply_m(&h, &cfg, &r), apply_m(&h, &cfg, &r1), apply_m(&h, &cfg, &r2));
        let mut diff = z.clone();
        for ((d, x), y) in diff.levels.iter_mut().flatten().zip(z1.levels.iter().flatten()).zip(z2.levels.iter().flatten()) {
            *d -= x + a * y;
        }
        let rel = leaf_max_abs(&h, &diff) / leaf_max_abs(&h, &z).max(1e-300);
        prop_assert!(rel <= 1e-10, "{}", rel);
    }

    #[test]
    fn uniform_preconditioner_is_symmetric(seed in any::<u64>(), level in 1u32..3, neumann in any::<bool>()) {
        let wall = if neumann { Wall::Neumann } else { Wall::Dirichlet };
        let h = hierarchy(AdaptiveGrid::uniform([1, 1, 1], level).unwrap(), wall);
        let cfg = CycleConfig::default();
        let r1 = random_leaf_field(&h, seed);
        let r2 = random_leaf_field(&h, seed.wrapping_add(1));
        let a = dot(&h, &apply_m(&h, &cfg, &r1), &r2);
        let b = dot(&h, &r1, &apply_m(&h, &cfg, &r2));
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()), "{} vs {}", a, b);
    }
}

#[test]
fn pcg_matches_a_dense_solve_on_a_cut_refined_slab() {
    let g = Arc::new(two_level_box());
    // Solid above y = 0.2 leaves a thin fluid slab cut across both levels.
    let scene = SceneSdf {
        solid: Some(Shape::HalfSpace {
            normal: [0.0, -1.0, 0.0],
            offset: -0.2,
        }),
        air: None,
    };
    let policy = BoundaryPolicy::uniform(Wall::Dirichlet);
    let k = classify_cells(&g, &scene);
    let c = assemble_coeffs(&g, &k, &scene, &policy);
    let h = Hierarchy::build(g, k, c, policy, &HierarchyConfig::default()).unwrap();
    let b = leaf_field(&h, |p| (3.0 * p[0]).sin() + p[2]);
    let cfg = SolveConfig {
        tol_relative: 1e-12,
        ..Default::default()
    };
    let (x, rep) = pcg_solve(&h, &b, &cfg).unwrap();
    assert!(rep.converged, "{rep:?}");
    let sys = assemble_dense_composite(&h, DEFAULT_CAP).unwrap();
    assert!(sys.n() > 100 && sys.n() < 2000, "{}", sys.n());
    let xd = dense_solve(&sys, &sys.gather(&b), false).unwrap();
    let err = (sys.gather(&x) - &xd).amax() / xd.amax();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn pcg_solution_satisfies_the_composite_system() {
    let h = hierarchy(three_level_cube(), Wall::DirichletFace);
    let b = leaf_field(&h, |p| p[0] * p[1] - 0.1);
    let cfg = SolveConfig {
        tol_relative: 1e-10,
        ..Default::default()
    };
    let (mut x, rep) = pcg_solve(&h, &b, &cfg).unwrap();
    assert!(rep.converged);
    let mut ax = h.new_field();
    apply_composite(&h, &mut x, &mut ax);
    let mut r = b.clone();
    for (ri, a) in r.levels.iter_mut().flatten().zip(ax.levels.iter().flatten()) {
        *ri -= a;
    }
    let rel = dot(&h, &r, &r).sqrt() / dot(&h, &b, &b).sqrt();
    assert!(rel < 1e-9, "{rel}");
}
