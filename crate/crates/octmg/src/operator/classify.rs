use super::CellKind;
use crate::grid::{local_coords, local_index, AdaptiveGrid, CellIndex, TileKind, TILE, TILE_CELLS};
use crate::scene::SceneSdf;
use rayon::prelude::*;

/// Cell kinds for every tile slot of every level, `slot * 512 + local`.
///
/// Leaf cells are classified from the scene, ghost cells copy the coarse
/// leaf they overlay, and inner cells take the strongest kind among their
/// children (Fluid over Dirichlet over Neumann).
#[derive(Debug, Clone, PartialEq)]
pub struct CellKinds {
    pub levels: Vec<Vec<CellKind>>,
}

impl CellKinds {
    pub fn get(&self, level: u32, slot: u32, local: usize) -> CellKind {
        self.levels[level as usize][slot as usize * TILE_CELLS + local]
    }

    pub fn count(&self, grid: &AdaptiveGrid, kind: CellKind) -> usize {
        (0..=grid.l_max())
            .flat_map(|l| {
                grid.tiles(l)
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.kind == TileKind::Leaf)
                    .map(move |(s, _)| (l, s))
            })
            .map(|(l, s)| {
                self.levels[l as usize][s * TILE_CELLS..(s + 1) * TILE_CELLS]
                    .iter()
                    .filter(|&&k| k == kind)
                    .count()
            })
            .sum()
    }
}

/// Neumann if inside the solid, else Dirichlet if inside the air, else Fluid;
/// sampled at cell centers.
pub fn classify_cells(grid: &AdaptiveGrid, scene: &SceneSdf) -> CellKinds {
    let mut levels: Vec<Vec<CellKind>> = (0..=grid.l_max())
        .map(|l| vec![CellKind::Neumann; grid.tiles(l).len() * TILE_CELLS])
        .collect();
    for l in 0..=grid.l_max() {
        let tiles = grid.tiles(l);
        levels[l as usize]
            .par_chunks_mut(TILE_CELLS)
            .zip(tiles.par_iter())
            .filter(|(_, t)| t.kind == TileKind::Leaf)
            .for_each(|(out, t)| {
                for (idx, k) in out.iter_mut().enumerate() {
                    let cell = CellIndex {
                        tile: t.coord,
                        offset: local_coords(idx).map(|o| o as u8),
                    };
                    let p = cell.center();
                    *k = if scene.solid_phi(p) < 0.0 {
                        CellKind::Neumann
                    } else if scene.air_phi(p) < 0.0 {
                        CellKind::Dirichlet
                    } else {
                        CellKind::Fluid
                    };
                }
            });
    }
    for l in (0..grid.l_max()).rev() {
        let (lo, hi) = levels.split_at_mut(l as usize + 1);
        let (cur, fine) = (&mut lo[l as usize], &hi[0]);
        for (s, t) in grid.tiles(l).iter().enumerate() {
            let Some(children) = t.children else { continue };
            for idx in 0..TILE_CELLS {
                let o = local_coords(idx);
                let mut best = CellKind::Neumann;
                for_each_child(o, &children, |cs, cidx| {
                    best = stronger(best, fine[cs * TILE_CELLS + cidx]);
                });
                cur[s * TILE_CELLS + idx] = best;
            }
        }
    }
    for l in 1..=grid.l_max() {
        let (lo, hi) = levels.split_at_mut(l as usize);
        let (coarse, cur) = (&lo[l as usize - 1], &mut hi[0]);
        for (s, t) in grid.tiles(l).iter().enumerate() {
            if t.kind != TileKind::Ghost {
                continue;
            }
            let p = t.parent.expect("ghost tiles have a coarse leaf") as usize;
            for idx in 0..TILE_CELLS {
                cur[s * TILE_CELLS + idx] = coarse[p * TILE_CELLS + ghost_source(t.coord.ijk, idx)];
            }
        }
    }
    CellKinds { levels }
}

fn stronger(a: CellKind, b: CellKind) -> CellKind {
    use CellKind::*;
    match (a, b) {
        (Fluid, _) | (_, Fluid) => Fluid,
        (Dirichlet, _) | (_, Dirichlet) => Dirichlet,
        _ => Neumann,
    }
}

/// Local index, inside the coarse leaf tile, of the cell a ghost cell overlays.
#[inline]
pub(crate) fn ghost_source(ghost_ijk: [u32; 3], idx: usize) -> usize {
    let o = local_coords(idx);
    local_index([0, 1, 2].map(|a| 4 * (ghost_ijk[a] as usize & 1) + o[a] / 2))
}

/// Visits the 8 children `(child slot, local index)` of coarse cell `o` in an
/// inner tile, in octant order.
#[inline]
pub(crate) fn for_each_child(o: [usize; 3], children: &[u32; 8], mut f: impl FnMut(usize, usize)) {
    let slot = children[crate::grid::octant_of(o.map(|x| x / (TILE / 2)))] as usize;
    let base = o.map(|x| 2 * (x % (TILE / 2)));
    for oc in 0..8 {
        let d = crate::grid::octant_offset(oc);
        f(
            slot,
            local_index([base[0] + d[0], base[1] + d[1], base[2] + d[2]]),
        );
    }
}
