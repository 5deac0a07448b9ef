use super::classify::CellKinds;
use super::{face_fluid_area, BoundaryPolicy, CellCoeffs, CellKind, FaceGeom, Wall};
use crate::grid::{
    cell_size, local_coords, local_index, AdaptiveGrid, CellIndex, Face, TileKind, TILE, TILE_CELLS,
};
use crate::scalar::Real;
use crate::scene::SceneSdf;
use rayon::prelude::*;

/// Coefficient of a same-size face between cells of kinds `a` and `b`:
/// zero when either side is solid or neither side is an unknown.
pub fn face_coeff(a: CellKind, b: CellKind, area: f64, h: f64) -> f64 {
    use CellKind::*;
    match (a, b) {
        (Neumann, _) | (_, Neumann) => 0.0,
        (Fluid, _) | (_, Fluid) => -area / h,
        _ => 0.0,
    }
}

/// Coarse-side share of one fine face at a refinement boundary; fine cells
/// that are not unknowns contribute nothing.
pub fn junction_coeff(coarse: CellKind, fine: CellKind, fine_area: f64, fine_h: f64) -> f64 {
    if coarse == CellKind::Neumann || fine != CellKind::Fluid {
        0.0
    } else {
        -fine_area / (2.0 * fine_h)
    }
}

/// Coefficient of a face on the domain boundary.
pub fn wall_coeff(wall: Wall, kind: CellKind, area: f64, h: f64) -> f64 {
    match (wall, kind) {
        (Wall::Neumann, _) | (_, CellKind::Neumann) => 0.0,
        (Wall::Dirichlet, _) => -area / h,
        (Wall::DirichletFace, _) => -2.0 * area / h,
    }
}

/// Leaf and ghost coefficients with face areas cut by `scene`. Inner slots
/// are left zero for the hierarchy to fill.
pub fn assemble_coeffs<T: Real>(
    grid: &AdaptiveGrid,
    kinds: &CellKinds,
    scene: &SceneSdf,
    policy: &BoundaryPolicy,
) -> Vec<Vec<CellCoeffs<T>>> {
    assemble_coeffs_with(grid, kinds, policy, |f: &FaceGeom| face_fluid_area(scene, f))
}

/// As [`assemble_coeffs`] with a caller-supplied fluid area per face.
pub fn assemble_coeffs_with<T, A>(
    grid: &AdaptiveGrid,
    kinds: &CellKinds,
    policy: &BoundaryPolicy,
    area: A,
) -> Vec<Vec<CellCoeffs<T>>>
where
    T: Real,
    A: Fn(&FaceGeom) -> f64 + Sync,
{
    let ctx = Ctx {
        grid,
        kinds,
        policy,
        area: &area,
    };
    (0..=grid.l_max())
        .map(|l| {
            let tiles = grid.tiles(l);
            let mut out = vec![CellCoeffs::zero(); tiles.len() * TILE_CELLS];
            out.par_chunks_mut(TILE_CELLS)
                .enumerate()
                .for_each(|(s, chunk)| match tiles[s].kind {
                    TileKind::Leaf => ctx.leaf_tile(l, s, chunk),
                    TileKind::Ghost => ctx.ghost_tile(l, s, chunk),
                    TileKind::Inner => {}
                });
            out
        })
        .collect()
}

struct Ctx<'a> {
    grid: &'a AdaptiveGrid,
    kinds: &'a CellKinds,
    policy: &'a BoundaryPolicy,
    area: &'a (dyn Fn(&FaceGeom) -> f64 + Sync),
}

/// Same-level neighbor `(slot, local coords)` across `face`, if a tile exists.
pub(crate) fn step(
    grid: &AdaptiveGrid,
    level: u32,
    slot: usize,
    o: [usize; 3],
    face: Face,
) -> Option<(usize, [usize; 3])> {
    let a = face.axis();
    let mut n = o;
    if face.is_plus() {
        if o[a] + 1 < TILE {
            n[a] += 1;
            return Some((slot, n));
        }
        n[a] = 0;
    } else {
        if o[a] > 0 {
            n[a] -= 1;
            return Some((slot, n));
        }
        n[a] = TILE - 1;
    }
    grid.tile(level, slot as u32).neighbors[face.index()].map(|s| (s as usize, n))
}

pub(crate) fn cell_face_geom(cell: &CellIndex, face: Face) -> FaceGeom {
    let h = cell.h();
    let g = cell.global();
    let mut lo = g.map(|x| x as f64 * h);
    if face.is_plus() {
        lo[face.axis()] += h;
    }
    FaceGeom {
        axis: face.axis(),
        lo,
        h,
    }
}

impl Ctx<'_> {
    fn kind(&self, l: u32, slot: usize, o: [usize; 3]) -> CellKind {
        self.kinds.levels[l as usize][slot * TILE_CELLS + local_index(o)]
    }

    fn leaf_tile<T: Real>(&self, l: u32, s: usize, out: &mut [CellCoeffs<T>]) {
        let coord = self.grid.tile(l, s as u32).coord;
        for (idx, rec) in out.iter_mut().enumerate() {
            let o = local_coords(idx);
            let me = self.kind(l, s, o);
            let cell = CellIndex {
                tile: coord,
                offset: o.map(|x| x as u8),
            };
            let faces = Face::ALL.map(|f| self.leaf_face(l, s, o, me, &cell, f));
            let minus = [faces[0], faces[2], faces[4]];
            let c = if me == CellKind::Fluid {
                -faces.iter().sum::<f64>()
            } else {
                0.0
            };
            *rec = CellCoeffs::new(T::of(c), T::of(minus[0]), T::of(minus[1]), T::of(minus[2]));
        }
    }

    fn leaf_face(&self, l: u32, s: usize, o: [usize; 3], me: CellKind, cell: &CellIndex, face: Face) -> f64 {
        let h = cell_size(l);
        let Some((ns, no)) = step(self.grid, l, s, o, face) else {
            let geom = cell_face_geom(cell, face);
            return wall_coeff(self.policy.wall(face), me, (self.area)(&geom), h);
        };
        match self.grid.tile(l, ns as u32).kind {
            TileKind::Leaf | TileKind::Ghost => {
                let geom = cell_face_geom(cell, face);
                face_coeff(me, self.kind(l, ns, no), (self.area)(&geom), h)
            }
            TileKind::Inner => {
                // Sum over the four finer cells across the face.
                let a = face.axis();
                let mut ng = cell.global();
                ng[a] = if face.is_plus() { ng[a] + 1 } else { ng[a] - 1 };
                let side = if face.is_plus() { 0 } else { 1 };
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                let mut sum = 0.0;
                for (db, dc) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let mut fg = ng.map(|x| 2 * x);
                    fg[a] += side;
                    fg[b] += db;
                    fg[c] += dc;
                    let fine = CellIndex::from_global(l + 1, fg);
                    let fs = self
                        .grid
                        .slot_of(fine.tile)
                        .expect("children of an inner tile exist") as usize;
                    debug_assert_eq!(self.grid.tile(l + 1, fs as u32).kind, TileKind::Leaf);
                    let fk = self.kind(l + 1, fs, fine.offset.map(|x| x as usize));
                    let geom = cell_face_geom(&fine, face.opposite());
                    sum += junction_coeff(me, fk, (self.area)(&geom), cell_size(l + 1));
                }
                sum
            }
        }
    }

    fn ghost_tile<T: Real>(&self, l: u32, s: usize, out: &mut [CellCoeffs<T>]) {
        let coord = self.grid.tile(l, s as u32).coord;
        let h = cell_size(l);
        for (idx, rec) in out.iter_mut().enumerate() {
            let o = local_coords(idx);
            let me = self.kind(l, s, o);
            let cell = CellIndex {
                tile: coord,
                offset: o.map(|x| x as u8),
            };
            let mut minus = [0.0; 3];
            for (a, m) in minus.iter_mut().enumerate() {
                let face = Face::new(a, false);
                if let Some((ns, no)) = step(self.grid, l, s, o, face) {
                    if self.grid.tile(l, ns as u32).kind == TileKind::Leaf {
                        let geom = cell_face_geom(&cell, face);
                        *m = face_coeff(me, self.kind(l, ns, no), (self.area)(&geom), h);
                    }
                }
            }
            *rec = CellCoeffs::new(T::zero(), T::of(minus[0]), T::of(minus[1]), T::of(minus[2]));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::classify_cells;
    use crate::scene::Shape;

    fn uniform_coeffs(scene: &SceneSdf, policy: BoundaryPolicy) -> (AdaptiveGrid, Vec<Vec<CellCoeffs<f64>>>) {
        let g = AdaptiveGrid::uniform([1, 1, 1], 0).unwrap();
        let k = classify_cells(&g, scene);
        let c = assemble_coeffs(&g, &k, scene, &policy);
        (g, c)
    }

    #[test]
    fn interior_fluid_cell() {
        let (_, c) = uniform_coeffs(&SceneSdf::default(), BoundaryPolicy::default());
        let h = 1.0 / 8.0;
        assert_eq!(c[0][local_index([3, 4, 5])], CellCoeffs::new(6.0 * h, -h, -h, -h));
        // Neumann walls: a corner cell keeps three faces.
        assert_eq!(
            c[0][local_index([0, 0, 0])],
            CellCoeffs::new(3.0 * h, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn neumann_and_dirichlet_neighbors() {
        let h = 1.0 / 8.0;
        // Solid fills x < 1/8 (first column), air fills x > 7/8 (last column).
        let scene = SceneSdf {
            solid: Some(Shape::HalfSpace {
                normal: [1.0, 0.0, 0.0],
                offset: h,
            }),
            air: Some(Shape::HalfSpace {
                normal: [-1.0, 0.0, 0.0],
                offset: -7.0 * h,
            }),
        };
        let (_, c) = uniform_coeffs(&scene, BoundaryPolicy::default());
        // Next to the solid: one face lost.
        assert_eq!(
            c[0][local_index([1, 4, 4])],
            CellCoeffs::new(5.0 * h, 0.0, -h, -h)
        );
        // Next to the air: cross-term kept, diagonal 6h.
        assert_eq!(c[0][local_index([6, 4, 4])], CellCoeffs::new(6.0 * h, -h, -h, -h));
        // The Dirichlet cell stores its cross-term toward the fluid but is not an unknown.
        assert_eq!(c[0][local_index([7, 4, 4])], CellCoeffs::new(0.0, -h, 0.0, 0.0));
    }

    #[test]
    fn dirichlet_face_wall_doubles_the_coefficient() {
        let h = 1.0 / 8.0;
        let (_, c) = uniform_coeffs(&SceneSdf::default(), BoundaryPolicy::uniform(Wall::DirichletFace));
        assert_eq!(
            c[0][local_index([0, 4, 4])],
            CellCoeffs::new(7.0 * h, -2.0 * h, -h, -h)
        );
        assert_eq!(c[0][local_index([7, 4, 4])], CellCoeffs::new(7.0 * h, -h, -h, -h));
    }

    #[test]
    fn junction_coefficients_on_both_sides() {
        // Left unit tile refined once; right tile stays at level 0.
        let g = AdaptiveGrid::build([2, 1, 1], |t| (t.ijk == [0, 0, 0]) as i64).unwrap();
        let scene = SceneSdf::default();
        let k = classify_cells(&g, &scene);
        let c: Vec<Vec<CellCoeffs<f64>>> = assemble_coeffs(&g, &k, &scene, &BoundaryPolicy::default());
        let hc = 1.0 / 8.0;
        let hf = hc / 2.0;
        let j = g.slot_of(crate::grid::TileCoord::new(0, [1, 0, 0])).unwrap() as usize;
        // Coarse side: four fine faces of area hf² at distance 2·hf.
        let rec = c[0][j * TILE_CELLS + local_index([0, 3, 3])];
        assert_eq!(rec.xm, -4.0 * hf * hf / (2.0 * hf));
        assert_eq!(rec.xm, -hc);
        assert_eq!(rec.c, 6.0 * hc);
        // Fine side stores −S/h toward the ghost on the ghost's −x face.
        let gs = g.slot_of(crate::grid::TileCoord::new(1, [2, 0, 0])).unwrap() as usize;
        assert_eq!(g.tile(1, gs as u32).kind, TileKind::Ghost);
        assert_eq!(c[1][gs * TILE_CELLS + local_index([0, 5, 5])].xm, -hf);
        assert_eq!(c[1][gs * TILE_CELLS + local_index([0, 5, 5])].c, 0.0);
    }
}
