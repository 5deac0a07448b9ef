//! Red-black Gauss–Seidel smoothing and the FAS-style μ-cycle.
//!
//! Level `l` updates its leaf and inner cells and reads the next coarser
//! level only through ghost reconstruction. Restriction builds inner-cell
//! right-hand sides as `β·R r + A u*`; coarse leaf rows keep the problem's
//! right-hand side, so the correction added back is `u − u*` and interface
//! fluxes are not counted twice.

use crate::grid::{local_coords, TileKind, TILE_CELLS};
use crate::hierarchy::{Field, Hierarchy};
use crate::operator::stencil::row;
use crate::operator::{apply_operator, compute_residual};
use crate::scalar::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepOrder {
    RedThenBlack,
    BlackThenRed,
}

impl SweepOrder {
    fn colors(self) -> [usize; 2] {
        match self {
            SweepOrder::RedThenBlack => [0, 1],
            SweepOrder::BlackThenRed => [1, 0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Visits of each coarser level per cycle: 1 is a V-cycle, 2 a W-cycle.
    pub mu: u32,
    pub nu_level: u32,
    pub nu_base: u32,
    /// Overshoot applied to the restricted residual.
    pub beta: f64,
    /// Also overshoot the self-residual of coarse leaf rows.
    pub beta_on_leaf_rows: bool,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            mu: 1,
            nu_level: 2,
            nu_base: 10,
            beta: 2.0,
            beta_on_leaf_rows: false,
        }
    }
}

/// Work arrays for one hierarchy, reused across cycles.
#[derive(Debug, Clone)]
pub struct CycleScratch<T> {
    pub u: Field<T>,
    pub b: Field<T>,
    /// Right-hand side the cycle was called with, on leaf rows.
    pub b0: Field<T>,
    r: Field<T>,
    ustar: Field<T>,
    tmp: Field<T>,
}

impl<T: Real> CycleScratch<T> {
    pub fn new(h: &Hierarchy<T>) -> Self {
        Self {
            u: h.new_field(),
            b: h.new_field(),
            b0: h.new_field(),
            r: h.new_field(),
            ustar: h.new_field(),
            tmp: h.new_field(),
        }
    }
}

/// One color of Gauss–Seidel on `level`. All cells of the color are updated
/// from the same snapshot, so the result does not depend on scheduling.
pub fn rbgs_sweep<T: Real>(
    h: &Hierarchy<T>,
    level: u32,
    color: usize,
    u: &mut Field<T>,
    b: &Field<T>,
    tmp: &mut Field<T>,
) {
    let grid = h.grid();
    let co = h.coeffs(level);
    let li = level as usize;
    let (lo, hi) = u.levels.split_at_mut(li);
    let cur = &mut hi[0];
    let uc: &[T] = if li > 0 { &lo[li - 1] } else { &[] };
    let bl = &b.levels[li];
    let out = &mut tmp.levels[li];
    out.copy_from_slice(cur);
    let cur_ro: &[T] = cur;
    out.par_chunks_mut(TILE_CELLS).enumerate().for_each(|(s, chunk)| {
        if grid.tile(level, s as u32).kind == TileKind::Ghost {
            return;
        }
        for (idx, v) in chunk.iter_mut().enumerate() {
            let o = local_coords(idx);
            if (o[0] + o[1] + o[2]) & 1 != color {
                continue;
            }
            let i = s * TILE_CELLS + idx;
            let c = co[i].c;
            if c == T::zero() {
                continue;
            }
            let (sum, dself) = row(h, level, s, o, cur_ro, uc);
            let res = bl[i] - (c * cur_ro[i] + sum);
            *v = cur_ro[i] + res / (c + dself);
        }
    });
    std::mem::swap(cur, out);
}

/// `count` color pairs in the given order.
pub fn smooth<T: Real>(
    h: &Hierarchy<T>,
    level: u32,
    count: u32,
    order: SweepOrder,
    u: &mut Field<T>,
    b: &Field<T>,
    tmp: &mut Field<T>,
) {
    for _ in 0..count {
        for color in order.colors() {
            rbgs_sweep(h, level, color, u, b, tmp);
        }
    }
}

/// One μ-cycle at `level` acting on `s.u` with right-hand side `s.b`.
pub fn fas_mu_cycle<T: Real>(h: &Hierarchy<T>, level: u32, cfg: &CycleConfig, s: &mut CycleScratch<T>) {
    if level == h.coarsest() {
        let first = cfg.nu_base / 2;
        smooth(
            h,
            level,
            first,
            SweepOrder::RedThenBlack,
            &mut s.u,
            &s.b,
            &mut s.tmp,
        );
        smooth(
            h,
            level,
            cfg.nu_base - first,
            SweepOrder::BlackThenRed,
            &mut s.u,
            &s.b,
            &mut s.tmp,
        );
        return;
    }
    let li = level as usize;
    smooth(
        h,
        level,
        cfg.nu_level,
        SweepOrder::RedThenBlack,
        &mut s.u,
        &s.b,
        &mut s.tmp,
    );

    compute_residual(h, level, &s.u, &s.b.levels[li], &mut s.r.levels[li]);
    {
        let (lo, hi) = s.u.levels.split_at_mut(li);
        h.average_down(level - 1, &hi[0], &mut s.ustar.levels[li - 1]);
        copy_inner(h, level - 1, &s.ustar.levels[li - 1], &mut lo[li - 1]);
    }
    // Inner rows: β·R r + A u*. Leaf rows: the original right-hand side.
    apply_operator(h, level - 1, &s.u, &mut s.tmp.levels[li - 1]);
    {
        let (rlo, rhi) = s.r.levels.split_at_mut(li);
        h.restrict_residual(level - 1, &rhi[0], &mut rlo[li - 1]);
    }
    let beta = T::of(cfg.beta);
    let grid = h.grid();
    let au = &s.tmp.levels[li - 1];
    let rr = &s.r.levels[li - 1];
    let b0 = &s.b0.levels[li - 1];
    let leaf_beta = cfg.beta_on_leaf_rows;
    s.b.levels[li - 1]
        .par_chunks_mut(TILE_CELLS)
        .enumerate()
        .for_each(|(slot, chunk)| {
            let base = slot * TILE_CELLS;
            match grid.tile(level - 1, slot as u32).kind {
                TileKind::Inner => {
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v = beta * rr[base + k] + au[base + k];
                    }
                }
                TileKind::Leaf => {
                    for (k, v) in chunk.iter_mut().enumerate() {
                        *v = if leaf_beta {
                            b0[base + k] + (beta - T::one()) * (b0[base + k] - au[base + k])
                        } else {
                            b0[base + k]
                        };
                    }
                }
                TileKind::Ghost => {}
            }
        });

    for _ in 0..cfg.mu {
        fas_mu_cycle(h, level - 1, cfg, s);
    }

    {
        let (lo, hi) = s.u.levels.split_at_mut(li);
        h.prolongate_update(level - 1, &lo[li - 1], &s.ustar.levels[li - 1], &mut hi[0]);
    }
    smooth(
        h,
        level,
        cfg.nu_level,
        SweepOrder::BlackThenRed,
        &mut s.u,
        &s.b,
        &mut s.tmp,
    );
}

fn copy_inner<T: Real>(h: &Hierarchy<T>, level: u32, src: &[T], dst: &mut [T]) {
    for (slot, _) in h.inner_tiles(level) {
        let r = slot * TILE_CELLS..(slot + 1) * TILE_CELLS;
        dst[r.clone()].copy_from_slice(&src[r]);
    }
}

/// `z ≈ A⁻¹ r` by one cycle from a zero guess. `r` and `z` are read and
/// written on leaf rows only.
pub fn precondition<T: Real>(
    h: &Hierarchy<T>,
    cfg: &CycleConfig,
    s: &mut CycleScratch<T>,
    r: &Field<T>,
    z: &mut Field<T>,
) {
    s.u.fill(T::zero());
    s.b.fill(T::zero());
    s.b0.fill(T::zero());
    for &(l, slot) in h.leaf_slots() {
        let rg = slot as usize * TILE_CELLS..(slot as usize + 1) * TILE_CELLS;
        let li = l as usize;
        s.b.levels[li][rg.clone()].copy_from_slice(&r.levels[li][rg.clone()]);
        s.b0.levels[li][rg.clone()].copy_from_slice(&r.levels[li][rg]);
    }
    fas_mu_cycle(h, h.finest(), cfg, s);
    for &(l, slot) in h.leaf_slots() {
        let rg = slot as usize * TILE_CELLS..(slot as usize + 1) * TILE_CELLS;
        let li = l as usize;
        z.levels[li][rg.clone()].copy_from_slice(&s.u.levels[li][rg]);
    }
}
