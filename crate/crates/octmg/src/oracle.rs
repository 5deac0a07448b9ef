//! Brute-force reference implementations for tests: explicit dense
//! assembly by unit-vector probes, dense Galerkin triple products, direct
//! solves and flux audits at refinement boundaries.

use crate::grid::{local_coords, local_index, octant_offset, Face, TileKind, TILE_CELLS};
use crate::hierarchy::{coarsen_coeffs, Field, Hierarchy};
use crate::operator::{apply_composite, apply_operator, face_coeff, CellCoeffs, CellKind, CellRef};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_CAP: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{n} unknowns exceed the dense cap of {cap}")]
    TooLarge { n: usize, cap: usize },
    #[error("matrix is singular beyond the constant null space")]
    Singular,
}

/// An explicit operator with the cell behind each row.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub matrix: DMatrix<f64>,
    pub cells: Vec<CellRef>,
}

impl DenseSystem {
    pub fn n(&self) -> usize {
        self.cells.len()
    }

    /// Gathers the system's cells from a field.
    pub fn gather(&self, f: &Field<f64>) -> DVector<f64> {
        DVector::from_iterator(self.n(), self.cells.iter().map(|c| cell(f, *c)))
    }

    /// Writes a vector back into the system's cells of `f`.
    pub fn scatter(&self, v: &DVector<f64>, f: &mut Field<f64>) {
        for (c, &x) in self.cells.iter().zip(v.iter()) {
            *cell_mut(f, *c) = x;
        }
    }

    pub fn symmetry_defect(&self) -> f64 {
        let m = &self.matrix;
        let scale = m.amax().max(f64::MIN_POSITIVE);
        (m - m.transpose()).amax() / scale
    }
}

fn cell(f: &Field<f64>, c: CellRef) -> f64 {
    f.levels[c.level as usize][c.slot as usize * TILE_CELLS + c.idx as usize]
}

fn cell_mut(f: &mut Field<f64>, c: CellRef) -> &mut f64 {
    &mut f.levels[c.level as usize][c.slot as usize * TILE_CELLS + c.idx as usize]
}

fn active_cells(h: &Hierarchy<f64>, level: u32, leaf_only: bool) -> Vec<CellRef> {
    let mut out = Vec::new();
    for (s, t) in h.grid().tiles(level).iter().enumerate() {
        let keep = match t.kind {
            TileKind::Leaf => true,
            TileKind::Inner => !leaf_only,
            TileKind::Ghost => false,
        };
        if !keep {
            continue;
        }
        for idx in 0..TILE_CELLS {
            if h.coeff(level, s, idx).is_active() {
                out.push(CellRef {
                    level,
                    slot: s as u32,
                    idx: idx as u16,
                });
            }
        }
    }
    out
}

/// The composite leaf operator, one probe per active leaf cell.
pub fn assemble_dense_composite(h: &Hierarchy<f64>, cap: usize) -> Result<DenseSystem, OracleError> {
    let g = h.grid();
    let cells: Vec<CellRef> = (g.l_min()..=g.l_max())
        .flat_map(|l| active_cells(h, l, true))
        .collect();
    if cells.len() > cap {
        return Err(OracleError::TooLarge { n: cells.len(), cap });
    }
    let n = cells.len();
    let sys = DenseSystem {
        matrix: DMatrix::zeros(n, n),
        cells,
    };
    let mut matrix = DMatrix::zeros(n, n);
    let mut x = h.new_field();
    let mut y = h.new_field();
    for j in 0..n {
        x.fill(0.0);
        *cell_mut(&mut x, sys.cells[j]) = 1.0;
        apply_composite(h, &mut x, &mut y);
        matrix.set_column(j, &sys.gather(&y));
    }
    Ok(DenseSystem { matrix, ..sys })
}

/// The operator of one hierarchy level over its leaf and inner cells, with
/// coarser levels held at zero.
pub fn assemble_dense_level(h: &Hierarchy<f64>, level: u32, cap: usize) -> Result<DenseSystem, OracleError> {
    let cells = active_cells(h, level, false);
    if cells.len() > cap {
        return Err(OracleError::TooLarge { n: cells.len(), cap });
    }
    let n = cells.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut x = h.new_field();
    let mut y = vec![0.0; x.levels[level as usize].len()];
    for (j, cj) in cells.iter().enumerate() {
        x.fill(0.0);
        *cell_mut(&mut x, *cj) = 1.0;
        apply_operator(h, level, &x, &mut y);
        for (i, ci) in cells.iter().enumerate() {
            matrix[(i, j)] = y[ci.slot as usize * TILE_CELLS + ci.idx as usize];
        }
    }
    Ok(DenseSystem { matrix, cells })
}

/// Lattice index with x fastest.
#[inline]
pub fn lattice_index(dims: [usize; 3], p: [usize; 3]) -> usize {
    p[0] + dims[0] * (p[1] + dims[1] * p[2])
}

/// `(1/α)·PᵀAP` for piecewise-constant prolongation from the half-size
/// lattice, with `P` restricted to active fine cells.
pub fn galerkin_triple(a: &DMatrix<f64>, dims: [usize; 3], active: &[bool], alpha: f64) -> DMatrix<f64> {
    let cd = dims.map(|d| d / 2);
    let nf = dims[0] * dims[1] * dims[2];
    let nc = cd[0] * cd[1] * cd[2];
    let mut p = DMatrix::zeros(nf, nc);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let i = lattice_index(dims, [x, y, z]);
                if active[i] {
                    p[(i, lattice_index(cd, [x / 2, y / 2, z / 2]))] = 1.0;
                }
            }
        }
    }
    p.transpose() * a * p / alpha
}

/// A uniform lattice of cell records with random kinds and face areas,
/// bounded by walls of random type.
#[derive(Debug, Clone)]
pub struct UniformPatch {
    pub dims: [usize; 3],
    pub h: f64,
    pub coeffs: Vec<CellCoeffs<f64>>,
}

impl UniformPatch {
    /// `kind(p)` gives each cell's kind, `area(axis, p)` the fluid area of the
    /// −axis face of cell `p` (including the lattice boundary), and
    /// `wall(face, p)` the coefficient of a boundary face.
    pub fn new(
        dims: [usize; 3],
        h: f64,
        kind: impl Fn([usize; 3]) -> CellKind,
        area: impl Fn(usize, [usize; 3]) -> f64,
        wall: impl Fn(Face, [usize; 3], CellKind) -> f64,
    ) -> Self {
        let n = dims[0] * dims[1] * dims[2];
        let mut coeffs = vec![CellCoeffs::zero(); n];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x, y, z];
                    let me = kind(p);
                    let mut faces = [0.0; 6];
                    for f in Face::ALL {
                        let a = f.axis();
                        let edge = if f.is_plus() {
                            p[a] + 1 == dims[a]
                        } else {
                            p[a] == 0
                        };
                        faces[f.index()] = if edge {
                            wall(f, p, me)
                        } else {
                            let mut q = p;
                            if f.is_plus() {
                                q[a] += 1;
                            } else {
                                q[a] -= 1;
                            }
                            let s = if f.is_plus() { area(a, q) } else { area(a, p) };
                            face_coeff(me, kind(q), s, h)
                        };
                    }
                    let c = if me == CellKind::Fluid {
                        -faces.iter().sum::<f64>()
                    } else {
                        0.0
                    };
                    coeffs[lattice_index(dims, p)] = CellCoeffs::new(c, faces[0], faces[2], faces[4]);
                }
            }
        }
        Self { dims, h, coeffs }
    }

    pub fn active(&self) -> Vec<bool> {
        self.coeffs.iter().map(|c| c.is_active()).collect()
    }

    /// Dense operator with cross terms only between active cells.
    pub fn dense(&self) -> DMatrix<f64> {
        let d = self.dims;
        let n = self.coeffs.len();
        let mut a = DMatrix::zeros(n, n);
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let p = [x, y, z];
                    let i = lattice_index(d, p);
                    let ci = &self.coeffs[i];
                    if !ci.is_active() {
                        continue;
                    }
                    a[(i, i)] = ci.c;
                    for ax in 0..3 {
                        if p[ax] == 0 {
                            continue;
                        }
                        let mut q = p;
                        q[ax] -= 1;
                        let j = lattice_index(d, q);
                        if self.coeffs[j].is_active() {
                            a[(i, j)] = ci.face(ax);
                            a[(j, i)] = ci.face(ax);
                        }
                    }
                }
            }
        }
        a
    }

    /// Matrix-free coarsening of every 2×2×2 block.
    pub fn coarsen(&self, alpha: f64) -> Vec<CellCoeffs<f64>> {
        let d = self.dims;
        let cd = d.map(|x| x / 2);
        let mut out = vec![CellCoeffs::zero(); cd[0] * cd[1] * cd[2]];
        for z in 0..cd[2] {
            for y in 0..cd[1] {
                for x in 0..cd[0] {
                    let mut block = [CellCoeffs::zero(); 8];
                    let mut outer = [[None; 3]; 8];
                    for (o, rec) in block.iter_mut().enumerate() {
                        let off = octant_offset(o);
                        let p = [2 * x + off[0], 2 * y + off[1], 2 * z + off[2]];
                        *rec = self.coeffs[lattice_index(d, p)];
                        for a in 0..3 {
                            if off[a] == 0 && p[a] > 0 {
                                let mut q = p;
                                q[a] -= 1;
                                outer[o][a] = Some(self.coeffs[lattice_index(d, q)].is_active());
                            }
                        }
                    }
                    out[lattice_index(cd, [x, y, z])] = coarsen_coeffs(alpha, &block, &outer);
                }
            }
        }
        out
    }
}

/// Largest deviation between coarsened records and the dense triple
/// product, relative to the largest coarse entry. Boundary `−` faces have
/// no dense counterpart and are skipped.
pub fn galerkin_mismatch(patch: &UniformPatch, alpha: f64) -> f64 {
    let cd = patch.dims.map(|x| x / 2);
    let rap = galerkin_triple(&patch.dense(), patch.dims, &patch.active(), alpha);
    let recs = patch.coarsen(alpha);
    let scale = rap.amax().max(patch.h);
    let mut worst: f64 = 0.0;
    for z in 0..cd[2] {
        for y in 0..cd[1] {
            for x in 0..cd[0] {
                let p = [x, y, z];
                let i = lattice_index(cd, p);
                let r = &recs[i];
                worst = worst.max((r.c - rap[(i, i)]).abs());
                for a in 0..3 {
                    if p[a] == 0 {
                        continue;
                    }
                    let mut q = p;
                    q[a] -= 1;
                    let j = lattice_index(cd, q);
                    let dense = rap[(i, j)];
                    // A record only speaks for pairs of active coarse cells.
                    let rec = if r.is_active() && recs[j].is_active() {
                        r.face(a)
                    } else {
                        0.0
                    };
                    let dense = if r.is_active() && recs[j].is_active() {
                        dense
                    } else {
                        0.0
                    };
                    worst = worst.max((rec - dense).abs());
                }
            }
        }
    }
    worst / scale
}

/// One refinement-boundary face group: a coarse leaf cell and the four fine
/// leaf cells across one of its faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluxRecord {
    pub coarse: CellRef,
    pub face: Face,
    /// Flux into the coarse cell summed over the fine faces.
    pub fine_flux: f64,
    /// The same flux as the coarse row sees it.
    pub coarse_flux: f64,
    /// Size of the operands entering either flux; rounding in the two sums
    /// is relative to this, not to the (possibly cancelled) flux itself.
    pub magnitude: f64,
}

impl FluxRecord {
    pub fn mismatch(&self) -> f64 {
        let scale = self
            .magnitude
            .max(self.fine_flux.abs())
            .max(self.coarse_flux.abs());
        if scale == 0.0 {
            0.0
        } else {
            (self.fine_flux - self.coarse_flux).abs() / scale
        }
    }
}

/// Fluxes across every face group between an active coarse leaf and a
/// refined neighbor, for leaf values `u` (inner cells are ignored).
pub fn flux_audit(h: &Hierarchy<f64>, u: &Field<f64>) -> Vec<FluxRecord> {
    let g = h.grid();
    let mut out = Vec::new();
    for l in g.l_min()..g.l_max() {
        for (s, t) in g.tiles(l).iter().enumerate() {
            if t.kind != TileKind::Leaf {
                continue;
            }
            for idx in 0..TILE_CELLS {
                let jc = h.coeff(l, s, idx);
                if !jc.is_active() {
                    continue;
                }
                let o = local_coords(idx);
                for face in Face::ALL {
                    if let Some(rec) = face_group(h, u, l, s, o, face) {
                        out.push(rec);
                    }
                }
            }
        }
    }
    out
}

fn face_group(
    h: &Hierarchy<f64>,
    u: &Field<f64>,
    l: u32,
    s: usize,
    o: [usize; 3],
    face: Face,
) -> Option<FluxRecord> {
    let g = h.grid();
    let a = face.axis();
    // Neighbor position one coarse cell over.
    let mut n = o;
    let mut ns = s;
    if face.is_plus() {
        if o[a] + 1 < 8 {
            n[a] += 1;
        } else {
            n[a] = 0;
            ns = g.tile(l, s as u32).neighbors[face.index()]? as usize;
        }
    } else if o[a] > 0 {
        n[a] -= 1;
    } else {
        n[a] = 7;
        ns = g.tile(l, s as u32).neighbors[face.index()]? as usize;
    }
    let nt = g.tile(l, ns as u32);
    let children = nt.children?;
    let p_rec = h.coeff(l, ns, local_index(n));
    let j_rec = h.coeff(l, s, local_index(o));
    // Coarse-side coefficient lives on whichever cell owns the −face.
    let k_coarse = if face.is_plus() {
        p_rec.face(a)
    } else {
        j_rec.face(a)
    };
    let uj = u.at(l, s, local_index(o));
    // Fine block under the neighbor.
    let co = [0, 1, 2].map(|b| n[b] / 4);
    let fs = children[co[0] + 2 * co[1] + 4 * co[2]] as usize;
    let base = [0, 1, 2].map(|b| 2 * (n[b] % 4));
    let fine_c = h.coeffs(l + 1);
    let mut vals = Vec::new();
    for k in 0..8 {
        let d = octant_offset(k);
        let fi = local_index([base[0] + d[0], base[1] + d[1], base[2] + d[2]]);
        vals.push((d, fi, fine_c[fs * TILE_CELLS + fi].is_active()));
    }
    let act: Vec<f64> = vals
        .iter()
        .filter(|v| v.2)
        .map(|v| u.at(l + 1, fs, v.1))
        .collect();
    let mean = if act.is_empty() {
        0.0
    } else {
        act.iter().sum::<f64>() / act.len() as f64
    };
    let near = if face.is_plus() { 0 } else { 1 };
    let mut fine_flux = 0.0;
    let mut magnitude = 0.0;
    for &(d, fi, active) in &vals {
        if d[a] != near || !active {
            continue;
        }
        let fo = local_coords(fi);
        // The fine cell's face toward the coarse cell.
        let toward = face.opposite();
        let k = if toward.is_plus() {
            // Stored on the ghost across the +face.
            let (gs, go) = crate::operator::assemble::step(g, l + 1, fs, fo, toward)?;
            h.coeff(l + 1, gs, local_index(go)).face(a)
        } else {
            fine_c[fs * TILE_CELLS + fi].face(a)
        };
        let uf = u.at(l + 1, fs, fi);
        let ghost = uf + 0.5 * (uj - mean);
        // Flux from the fine cell into the coarse one.
        fine_flux += -k * (uf - ghost);
        magnitude += k.abs() * (uf.abs() + uj.abs() + mean.abs());
    }
    let coarse_flux = if p_rec.is_active() {
        -k_coarse * (mean - uj)
    } else {
        0.0
    };
    Some(FluxRecord {
        coarse: CellRef {
            level: l,
            slot: s as u32,
            idx: local_index(o) as u16,
        },
        face,
        fine_flux,
        coarse_flux,
        magnitude,
    })
}

/// Direct solve. With `nullspace`, the constant mode is pinned by a
/// bordered system and the returned solution has zero mean.
pub fn dense_solve(
    sys: &DenseSystem,
    b: &DVector<f64>,
    nullspace: bool,
) -> Result<DVector<f64>, OracleError> {
    let n = sys.n();
    if !nullspace {
        return sys.matrix.clone().lu().solve(b).ok_or(OracleError::Singular);
    }
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&sys.matrix);
    for i in 0..n {
        m[(i, n)] = 1.0;
        m[(n, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(b);
    let x = m.lu().solve(&rhs).ok_or(OracleError::Singular)?;
    Ok(x.rows(0, n).into_owned())
}

/// Smallest eigenvalue of the symmetric part.
pub fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}
