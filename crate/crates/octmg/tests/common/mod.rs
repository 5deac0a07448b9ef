#![allow(dead_code)]

use octmg::grid::{local_coords, TileCoord, TILE_CELLS};
use octmg::operator::{assemble_coeffs, assemble_coeffs_with, classify_cells, FaceGeom};
use octmg::{AdaptiveGrid, BoundaryPolicy, Field, Hierarchy, HierarchyConfig, SceneSdf, Wall};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

pub fn hierarchy(grid: AdaptiveGrid, wall: Wall) -> Hierarchy<f64> {
    let g = Arc::new(grid);
    let scene = SceneSdf::default();
    let policy = BoundaryPolicy::uniform(wall);
    let k = classify_cells(&g, &scene);
    let c = assemble_coeffs(&g, &k, &scene, &policy);
    Hierarchy::build(g, k, c, policy, &HierarchyConfig::default()).unwrap()
}

/// Face areas drawn from a hash of the face position, so both sides of a
/// face agree and reruns repeat.
pub fn hierarchy_with_random_areas(grid: AdaptiveGrid, wall: Wall, seed: u64) -> Hierarchy<f64> {
    let g = Arc::new(grid);
    let scene = SceneSdf::default();
    let policy = BoundaryPolicy::uniform(wall);
    let k = classify_cells(&g, &scene);
    let area = |f: &FaceGeom| {
        let mut s = DefaultHasher::new();
        (seed, f.axis, f.lo.map(f64::to_bits), f.h.to_bits()).hash(&mut s);
        let u = (s.finish() >> 11) as f64 / (1u64 << 53) as f64;
        f.h * f.h * u
    };
    let c = assemble_coeffs_with(&g, &k, &policy, area);
    Hierarchy::build(g, k, c, policy, &HierarchyConfig::default()).unwrap()
}

/// Root tile [0,0,0] refined once inside a 2×1×1 domain.
pub fn two_level_box() -> AdaptiveGrid {
    AdaptiveGrid::build([2, 1, 1], |t: TileCoord| (t.ijk == [0, 0, 0]) as i64).unwrap()
}

/// Three levels: a corner refined twice inside a unit cube at level 1.
pub fn three_level_cube() -> AdaptiveGrid {
    AdaptiveGrid::build([1, 1, 1], |t: TileCoord| {
        let c = t.center();
        if c.iter().all(|&x| x < 0.3) {
            3
        } else {
            1
        }
    })
    .unwrap()
}

/// Leaf-row field from `f(center)`; inner and ghost slots stay zero.
pub fn leaf_field(h: &Hierarchy<f64>, mut f: impl FnMut([f64; 3]) -> f64) -> Field<f64> {
    let g = h.grid();
    let mut x = h.new_field();
    for &(l, s) in h.leaf_slots() {
        let t = g.tile(l, s);
        for idx in 0..TILE_CELLS {
            if h.coeff(l, s as usize, idx).is_active() {
                let c = octmg::CellIndex {
                    tile: t.coord,
                    offset: local_coords(idx).map(|o| o as u8),
                };
                *x.at_mut(l, s as usize, idx) = f(c.center());
            }
        }
    }
    x
}
