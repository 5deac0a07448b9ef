use super::classify::ghost_source;
use crate::grid::{local_coords, local_index, Face, TileKind, TILE_CELLS};
use crate::hierarchy::{Field, Hierarchy};
use crate::scalar::Real;
use rayon::prelude::*;

/// Value seen by a fine cell across a refinement boundary: its own value
/// shifted by half the jump between the coarse neighbor and the local
/// block mean.
#[inline]
pub fn reconstruct_ghost<T: Real>(fine: T, coarse: T, block_mean: T) -> T {
    fine + (coarse - block_mean) * T::of(0.5)
}

/// Off-diagonal part of row `(slot, o)` on `level`, plus the extra
/// self-coupling that ghost reconstruction adds to the diagonal.
///
/// `u` holds the level's values, `uc` the next coarser level's (read only
/// through ghost tiles). Neighbors that are not unknowns contribute zero.
pub(crate) fn row<T: Real>(
    h: &Hierarchy<T>,
    level: u32,
    slot: usize,
    o: [usize; 3],
    u: &[T],
    uc: &[T],
) -> (T, T) {
    let grid = h.grid();
    let co = h.coeffs(level);
    let me = &co[slot * TILE_CELLS + local_index(o)];
    let mut sum = T::zero();
    let mut dself = T::zero();
    for face in Face::ALL {
        let Some((ns, no)) = super::assemble::step(grid, level, slot, o, face) else {
            continue;
        };
        let ni = ns * TILE_CELLS + local_index(no);
        let nb = &co[ni];
        let a = face.axis();
        let coef = if face.is_plus() { nb.face(a) } else { me.face(a) };
        if coef == T::zero() {
            continue;
        }
        let t = grid.tile(level, ns as u32);
        match t.kind {
            TileKind::Leaf | TileKind::Inner => {
                if nb.is_active() {
                    sum += coef * u[ni];
                }
            }
            TileKind::Ghost => {
                let p = t.parent.expect("ghost tiles have a coarse leaf") as usize;
                let ji = p * TILE_CELLS + ghost_source(t.coord.ijk, local_index(no));
                let uj = if h.coeffs(level - 1)[ji].is_active() {
                    uc[ji]
                } else {
                    T::zero()
                };
                let (mean, n) = block_mean(co, u, slot, o);
                let ui = u[slot * TILE_CELLS + local_index(o)];
                sum += coef * reconstruct_ghost(ui, uj, mean);
                if n > 0 {
                    dself += coef * (T::one() - T::one() / T::of(2.0 * n as f64));
                }
            }
        }
    }
    (sum, dself)
}

/// Mean over the active cells of the aligned 2×2×2 block holding `o`.
fn block_mean<T: Real>(co: &[super::CellCoeffs<T>], u: &[T], slot: usize, o: [usize; 3]) -> (T, usize) {
    let base = o.map(|x| x & !1);
    let mut s = T::zero();
    let mut n = 0;
    for oc in 0..8 {
        let d = crate::grid::octant_offset(oc);
        let i = slot * TILE_CELLS + local_index([base[0] + d[0], base[1] + d[1], base[2] + d[2]]);
        if co[i].is_active() {
            s += u[i];
            n += 1;
        }
    }
    let mean = if n == 0 { T::zero() } else { s / T::of(n as f64) };
    (mean, n)
}

/// `out = A x` on the leaf and inner cells of `level`; other cells get zero.
pub fn apply_operator<T: Real>(h: &Hierarchy<T>, level: u32, x: &Field<T>, out: &mut [T]) {
    let grid = h.grid();
    let co = h.coeffs(level);
    let u = &x.levels[level as usize];
    let uc: &[T] = if level > 0 {
        &x.levels[level as usize - 1]
    } else {
        &[]
    };
    out.par_chunks_mut(TILE_CELLS).enumerate().for_each(|(s, chunk)| {
        if grid.tile(level, s as u32).kind == TileKind::Ghost {
            chunk.fill(T::zero());
            return;
        }
        for (idx, v) in chunk.iter_mut().enumerate() {
            let i = s * TILE_CELLS + idx;
            *v = if co[i].is_active() {
                let (sum, _) = row(h, level, s, local_coords(idx), u, uc);
                co[i].c * u[i] + sum
            } else {
                T::zero()
            };
        }
    });
}

/// `r = b − A x` on the leaf and inner cells of `level`.
pub fn compute_residual<T: Real>(h: &Hierarchy<T>, level: u32, x: &Field<T>, b: &[T], r: &mut [T]) {
    apply_operator(h, level, x, r);
    let co = h.coeffs(level);
    r.par_iter_mut()
        .zip(b.par_iter())
        .zip(co.par_iter())
        .for_each(|((r, &b), c)| {
            *r = if c.is_active() { b - *r } else { T::zero() };
        });
}

/// Composite-grid product on leaf cells. Inner cells of `x` are first set
/// to the mean of their children; `out` is written on leaf tiles only.
pub fn apply_composite<T: Real>(h: &Hierarchy<T>, x: &mut Field<T>, out: &mut Field<T>) {
    h.fill_inner(x);
    for l in h.grid().l_min()..=h.finest() {
        let grid = h.grid();
        let co = h.coeffs(l);
        let u = &x.levels[l as usize];
        let uc: &[T] = if l > 0 { &x.levels[l as usize - 1] } else { &[] };
        out.levels[l as usize]
            .par_chunks_mut(TILE_CELLS)
            .enumerate()
            .for_each(|(s, chunk)| {
                if grid.tile(l, s as u32).kind != TileKind::Leaf {
                    return;
                }
                for (idx, v) in chunk.iter_mut().enumerate() {
                    let i = s * TILE_CELLS + idx;
                    *v = if co[i].is_active() {
                        let (sum, _) = row(h, l, s, local_coords(idx), u, uc);
                        co[i].c * u[i] + sum
                    } else {
                        T::zero()
                    };
                }
            });
    }
}
