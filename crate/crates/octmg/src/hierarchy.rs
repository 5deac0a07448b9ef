//! Multigrid level stack over the octree.
//!
//! Level `l` of the hierarchy holds the leaf cells of level `l` and the inner
//! cells of level `l`. Leaf coefficients come from direct assembly; inner
//! coefficients come from Galerkin coarsening of their children. Below the
//! coarsest leaf level coarsening continues on inner tiles until the active
//! count drops to the configured threshold.

use crate::grid::{cell_size, local_coords, octant_offset, AdaptiveGrid, Face, TileKind, TILE_CELLS};
use crate::operator::classify::{for_each_child, ghost_source};
use crate::operator::{
    assemble::step, face_coeff, wall_coeff, BoundaryPolicy, CellCoeffs, CellKind, CellKinds,
};
use crate::scalar::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("no active cell on any leaf level")]
    NoUnknowns,
    #[error("coefficients cover {got} levels, grid has {want}")]
    Shape { got: usize, want: usize },
    #[error("alpha must be positive, got {0}")]
    BadAlpha(f64),
}

/// How inner-cell coefficients are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Coarsening {
    /// Matrix-free Galerkin product of the children.
    #[default]
    Galerkin,
    /// Rediscretized per level with full faces; a deliberately naive baseline.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub alpha: f64,
    pub coarsest_threshold: usize,
    pub coarsening: Coarsening,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            coarsest_threshold: TILE_CELLS,
            coarsening: Coarsening::Galerkin,
        }
    }
}

/// One value per cell of every tile slot on the hierarchy's levels, indexed
/// by absolute level. Levels below the coarsest are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T> {
    pub levels: Vec<Vec<T>>,
}

impl<T: Real> Field<T> {
    pub fn fill(&mut self, v: T) {
        for lv in &mut self.levels {
            lv.iter_mut().for_each(|x| *x = v);
        }
    }

    #[inline]
    pub fn at(&self, level: u32, slot: usize, idx: usize) -> T {
        self.levels[level as usize][slot * TILE_CELLS + idx]
    }

    #[inline]
    pub fn at_mut(&mut self, level: u32, slot: usize, idx: usize) -> &mut T {
        &mut self.levels[level as usize][slot * TILE_CELLS + idx]
    }
}

#[derive(Debug, Clone)]
pub struct Hierarchy<T> {
    grid: Arc<AdaptiveGrid>,
    kinds: CellKinds,
    coeffs: Vec<Vec<CellCoeffs<T>>>,
    policy: BoundaryPolicy,
    coarsest: u32,
    alpha: T,
    leaf_slots: Vec<(u32, u32)>,
}

/// Parent coefficients from a 2×2×2 child block.
///
/// `children` is in octant order (`x + 2y + 4z`). `outer[o][a]` is the
/// activity of child `o`'s neighbor across its −`a` face when that neighbor
/// lies outside the block; `None` means a domain wall. Cross terms count only
/// when both endpoints are active.
pub fn coarsen_coeffs<T: Real>(
    alpha: T,
    children: &[CellCoeffs<T>; 8],
    outer: &[[Option<bool>; 3]; 8],
) -> CellCoeffs<T> {
    let inv = T::one() / alpha;
    let two = T::of(2.0) * inv;
    let mut out = CellCoeffs::<T>::zero();
    let mut active = 0;
    let mut scale = T::zero();
    for o in 0..8 {
        let d = octant_offset(o);
        let ch = &children[o];
        let act = ch.is_active();
        if act {
            active += 1;
            out.c += inv * ch.c;
            scale += ch.c.abs();
        }
        for a in 0..3 {
            if d[a] == 1 {
                if act && children[o - (1 << a)].is_active() {
                    out.c += two * ch.face(a);
                }
            } else if act && outer[o][a].unwrap_or(true) {
                *out.face_mut(a) += inv * ch.face(a);
            }
        }
    }
    // A block closed off on all sides sums to round-off; it has no coarse row.
    if active == 0 || out.c.abs() <= T::epsilon() * T::of(64.0) * scale * inv {
        out.c = T::zero();
    }
    out
}

impl<T: Real> Hierarchy<T> {
    /// Fills inner coefficients level by level, from the finest down to the
    /// coarsest level the threshold allows.
    pub fn build(
        grid: Arc<AdaptiveGrid>,
        kinds: CellKinds,
        mut coeffs: Vec<Vec<CellCoeffs<T>>>,
        policy: BoundaryPolicy,
        config: &HierarchyConfig,
    ) -> Result<Self, HierarchyError> {
        if coeffs.len() != grid.l_max() as usize + 1 {
            return Err(HierarchyError::Shape {
                got: coeffs.len(),
                want: grid.l_max() as usize + 1,
            });
        }
        if config.alpha.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(HierarchyError::BadAlpha(config.alpha));
        }
        let alpha = T::of(config.alpha);
        let mut leaf_slots = Vec::new();
        for l in 0..=grid.l_max() {
            for (s, t) in grid.tiles(l).iter().enumerate() {
                if t.kind == TileKind::Leaf {
                    leaf_slots.push((l, s as u32));
                }
            }
        }
        let any_active = leaf_slots.iter().any(|&(l, s)| {
            let s = s as usize;
            coeffs[l as usize][s * TILE_CELLS..(s + 1) * TILE_CELLS]
                .iter()
                .any(|c| c.is_active())
        });
        if !any_active {
            return Err(HierarchyError::NoUnknowns);
        }
        let mut h = Self {
            grid,
            kinds,
            coeffs: Vec::new(),
            policy,
            coarsest: 0,
            alpha,
            leaf_slots,
        };
        let l_min = h.grid.l_min();
        let mut l = h.grid.l_max();
        while l > 0 && (l > l_min || h.active_count_in(&coeffs, l) > config.coarsest_threshold) {
            let inner = match config.coarsening {
                Coarsening::Galerkin => h.galerkin_level(&coeffs, l - 1),
                Coarsening::Geometric => h.geometric_level(l - 1),
            };
            for (s, rec) in inner {
                coeffs[(l - 1) as usize][s * TILE_CELLS..(s + 1) * TILE_CELLS].copy_from_slice(&rec);
            }
            l -= 1;
        }
        h.coarsest = l;
        h.coeffs = coeffs;
        Ok(h)
    }

    pub fn grid(&self) -> &AdaptiveGrid {
        &self.grid
    }

    pub fn grid_arc(&self) -> &Arc<AdaptiveGrid> {
        &self.grid
    }

    pub fn kinds(&self) -> &CellKinds {
        &self.kinds
    }

    pub fn policy(&self) -> &BoundaryPolicy {
        &self.policy
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn coarsest(&self) -> u32 {
        self.coarsest
    }

    pub fn finest(&self) -> u32 {
        self.grid.l_max()
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<u32> {
        self.coarsest..=self.grid.l_max()
    }

    /// Coefficients of every slot at `level` (empty below the coarsest level).
    pub fn coeffs(&self, level: u32) -> &[CellCoeffs<T>] {
        if level < self.coarsest {
            &[]
        } else {
            &self.coeffs[level as usize]
        }
    }

    #[inline]
    pub fn coeff(&self, level: u32, slot: usize, idx: usize) -> &CellCoeffs<T> {
        &self.coeffs[level as usize][slot * TILE_CELLS + idx]
    }

    /// `(level, slot)` of every leaf tile, coarse levels first.
    pub fn leaf_slots(&self) -> &[(u32, u32)] {
        &self.leaf_slots
    }

    pub fn new_field(&self) -> Field<T> {
        Field {
            levels: (0..=self.grid.l_max())
                .map(|l| {
                    if l < self.coarsest {
                        Vec::new()
                    } else {
                        vec![T::zero(); self.grid.tiles(l).len() * TILE_CELLS]
                    }
                })
                .collect(),
        }
    }

    /// Active cells of leaf and inner tiles at `level`.
    pub fn active_count(&self, level: u32) -> usize {
        self.active_count_in(&self.coeffs, level)
    }

    /// Active leaf cells over all levels.
    pub fn unknowns(&self) -> usize {
        self.leaf_slots
            .iter()
            .map(|&(l, s)| {
                let s = s as usize;
                self.coeffs[l as usize][s * TILE_CELLS..(s + 1) * TILE_CELLS]
                    .iter()
                    .filter(|c| c.is_active())
                    .count()
            })
            .sum()
    }

    fn active_count_in(&self, coeffs: &[Vec<CellCoeffs<T>>], level: u32) -> usize {
        self.grid
            .tiles(level)
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind != TileKind::Ghost)
            .map(|(s, _)| {
                coeffs[level as usize][s * TILE_CELLS..(s + 1) * TILE_CELLS]
                    .iter()
                    .filter(|c| c.is_active())
                    .count()
            })
            .sum()
    }

    fn galerkin_level(&self, coeffs: &[Vec<CellCoeffs<T>>], l: u32) -> Vec<(usize, Vec<CellCoeffs<T>>)> {
        let grid = &*self.grid;
        let fine = &coeffs[l as usize + 1];
        let cur = &coeffs[l as usize];
        let alpha = self.alpha;
        grid.tiles(l)
            .par_iter()
            .enumerate()
            .filter_map(|(s, t)| t.children.map(|ch| (s, ch)))
            .map(|(s, children)| {
                let rec = (0..TILE_CELLS)
                    .map(|idx| {
                        let mut block = [CellCoeffs::zero(); 8];
                        let mut outer = [[None; 3]; 8];
                        let mut k = 0;
                        for_each_child(local_coords(idx), &children, |cs, ci| {
                            block[k] = fine[cs * TILE_CELLS + ci];
                            let co = local_coords(ci);
                            let d = octant_offset(k);
                            for (a, slot) in outer[k].iter_mut().enumerate() {
                                if d[a] == 0 {
                                    *slot = step(grid, l + 1, cs, co, Face::new(a, false))
                                        .map(|(ns, no)| neighbor_active(grid, fine, cur, l + 1, ns, no));
                                }
                            }
                            k += 1;
                        });
                        coarsen_coeffs(alpha, &block, &outer)
                    })
                    .collect();
                (s, rec)
            })
            .collect()
    }

    fn geometric_level(&self, l: u32) -> Vec<(usize, Vec<CellCoeffs<T>>)> {
        let grid = &*self.grid;
        let h = cell_size(l);
        let kinds = &self.kinds.levels[l as usize];
        let policy = self.policy;
        grid.tiles(l)
            .par_iter()
            .enumerate()
            .filter(|(_, t)| t.kind == TileKind::Inner)
            .map(|(s, _)| {
                let rec = (0..TILE_CELLS)
                    .map(|idx| {
                        let o = local_coords(idx);
                        let me = kinds[s * TILE_CELLS + idx];
                        let faces = Face::ALL.map(|f| match step(grid, l, s, o, f) {
                            None => wall_coeff(policy.wall(f), me, h * h, h),
                            Some((ns, no)) => face_coeff(
                                me,
                                kinds[ns * TILE_CELLS + crate::grid::local_index(no)],
                                h * h,
                                h,
                            ),
                        });
                        let c = if me == CellKind::Fluid {
                            -faces.iter().sum::<f64>()
                        } else {
                            0.0
                        };
                        CellCoeffs::new(T::of(c), T::of(faces[0]), T::of(faces[2]), T::of(faces[4]))
                    })
                    .collect();
                (s, rec)
            })
            .collect()
    }
}

/// Activity of a cell at `level`; a ghost resolves to the coarse leaf under it.
fn neighbor_active<T: Real>(
    grid: &AdaptiveGrid,
    fine: &[CellCoeffs<T>],
    coarse: &[CellCoeffs<T>],
    level: u32,
    slot: usize,
    o: [usize; 3],
) -> bool {
    let t = grid.tile(level, slot as u32);
    let idx = crate::grid::local_index(o);
    match t.kind {
        TileKind::Ghost => {
            let p = t.parent.expect("ghost tiles have a coarse leaf") as usize;
            coarse[p * TILE_CELLS + ghost_source(t.coord.ijk, idx)].is_active()
        }
        _ => fine[slot * TILE_CELLS + idx].is_active(),
    }
}

/// `(1/α)·Σ` of the active children's values.
pub fn restrict_block<T: Real>(alpha: T, values: &[T; 8], active: &[bool; 8]) -> T {
    let mut s = T::zero();
    for o in 0..8 {
        if active[o] {
            s += values[o];
        }
    }
    s / alpha
}

/// Mean over the active children, or zero when none is active.
pub fn average_block<T: Real>(values: &[T; 8], active: &[bool; 8]) -> T {
    let mut s = T::zero();
    let mut n = 0;
    for o in 0..8 {
        if active[o] {
            s += values[o];
            n += 1;
        }
    }
    if n == 0 {
        T::zero()
    } else {
        s / T::of(n as f64)
    }
}

impl<T: Real> Hierarchy<T> {
    /// Visits each inner tile at `level` with its child slots.
    pub(crate) fn inner_tiles(&self, level: u32) -> impl Iterator<Item = (usize, [u32; 8])> + '_ {
        self.grid
            .tiles(level)
            .iter()
            .enumerate()
            .filter_map(|(s, t)| t.children.map(|c| (s, c)))
    }

    /// Inner cells of `level` take the mean of their active children.
    pub fn average_down(&self, level: u32, fine: &[T], coarse: &mut [T]) {
        let fc = &self.coeffs[level as usize + 1];
        let grid = &*self.grid;
        coarse
            .par_chunks_mut(TILE_CELLS)
            .enumerate()
            .for_each(|(s, out)| {
                let Some(children) = grid.tile(level, s as u32).children else {
                    return;
                };
                for (idx, v) in out.iter_mut().enumerate() {
                    let (vals, act) = gather(&children, idx, fine, fc);
                    *v = average_block(&vals, &act);
                }
            });
    }

    /// `(1/α)·Σ` active-children residuals into the inner cells of `level`.
    pub fn restrict_residual(&self, level: u32, fine_r: &[T], out: &mut [T]) {
        let fc = &self.coeffs[level as usize + 1];
        let grid = &*self.grid;
        let alpha = self.alpha;
        out.par_chunks_mut(TILE_CELLS).enumerate().for_each(|(s, out)| {
            let Some(children) = grid.tile(level, s as u32).children else {
                return;
            };
            for (idx, v) in out.iter_mut().enumerate() {
                let (vals, act) = gather(&children, idx, fine_r, fc);
                *v = restrict_block(alpha, &vals, &act);
            }
        });
    }

    /// Adds `u − u*` of each inner cell at `level` to its active children.
    pub fn prolongate_update(&self, level: u32, coarse: &[T], coarse_star: &[T], fine: &mut [T]) {
        let grid = &*self.grid;
        let fc = &self.coeffs[level as usize + 1];
        // Group children by fine tile so writes stay disjoint.
        fine.par_chunks_mut(TILE_CELLS).enumerate().for_each(|(fs, out)| {
            let t = grid.tile(level + 1, fs as u32);
            if t.kind == TileKind::Ghost {
                return;
            }
            let Some(ps) = t.parent else { return };
            let ps = ps as usize;
            for (ci, v) in out.iter_mut().enumerate() {
                if !fc[fs * TILE_CELLS + ci].is_active() {
                    continue;
                }
                let co = local_coords(ci);
                let pc = [0, 1, 2].map(|a| 4 * (t.coord.ijk[a] as usize & 1) + co[a] / 2);
                let pi = ps * TILE_CELLS + crate::grid::local_index(pc);
                *v += coarse[pi] - coarse_star[pi];
            }
        });
    }

    /// Fills inner cells on leaf-bearing levels with the mean of their
    /// active children, finest first.
    pub fn fill_inner(&self, x: &mut Field<T>) {
        let lo = self.grid.l_min();
        for l in (lo..self.grid.l_max()).rev() {
            let (a, b) = x.levels.split_at_mut(l as usize + 1);
            self.average_down(l, &b[0], &mut a[l as usize]);
        }
    }
}

fn gather<T: Real>(children: &[u32; 8], idx: usize, fine: &[T], fc: &[CellCoeffs<T>]) -> ([T; 8], [bool; 8]) {
    let mut vals = [T::zero(); 8];
    let mut act = [false; 8];
    let mut k = 0;
    for_each_child(local_coords(idx), children, |cs, ci| {
        let i = cs * TILE_CELLS + ci;
        vals[k] = fine[i];
        act[k] = fc[i].is_active();
        k += 1;
    });
    (vals, act)
}
