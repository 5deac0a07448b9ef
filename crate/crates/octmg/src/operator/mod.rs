//! Cut-cell finite-volume Poisson operator in matrix-free form.
//!
//! Each cell stores its diagonal and the coefficients of its three negative
//! faces; the positive-face coefficients are read from the neighbors. All
//! coefficients carry a factor of `h`, so `(A p)_i` is the net outward flux
//! `Σ S/h·(p_i − p_j)` and approximates `−∇²p` times the cell volume.

mod area;
pub(crate) mod assemble;
pub(crate) mod classify;
mod projection;
pub(crate) mod stencil;

pub use area::{face_fluid_area, fluid_fraction, FaceGeom};
pub use assemble::{assemble_coeffs, assemble_coeffs_with, face_coeff, junction_coeff, wall_coeff};
pub use classify::{classify_cells, CellKinds};
pub use projection::{CellRef, FaceKind, FaceVelocity, MacFace, MacFaces};
pub use stencil::{apply_composite, apply_operator, compute_residual, reconstruct_ghost};

use crate::grid::Face;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Fluid,
    /// Prescribed zero value.
    Dirichlet,
    /// Solid; faces touching it carry no flux.
    Neumann,
}

/// Boundary condition on a domain face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    Neumann,
    /// Air beyond the wall: a zero-valued cell at distance `h`.
    Dirichlet,
    /// Zero value on the wall face itself, at distance `h/2`.
    DirichletFace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryPolicy {
    /// Indexed by `Face::index()`.
    pub walls: [Wall; 6],
}

impl BoundaryPolicy {
    pub fn uniform(wall: Wall) -> Self {
        Self { walls: [wall; 6] }
    }

    pub fn wall(&self, face: Face) -> Wall {
        self.walls[face.index()]
    }
}

impl Default for BoundaryPolicy {
    fn default() -> Self {
        Self::uniform(Wall::Neumann)
    }
}

/// Diagonal plus the −x, −y, −z face coefficients. `c == 0` marks a cell
/// that is not an unknown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellCoeffs<T> {
    pub c: T,
    pub xm: T,
    pub ym: T,
    pub zm: T,
}

impl<T: Real> CellCoeffs<T> {
    pub fn new(c: T, xm: T, ym: T, zm: T) -> Self {
        Self { c, xm, ym, zm }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn is_active(&self) -> bool {
        self.c != T::zero()
    }

    /// Negative-face coefficient along `axis`.
    #[inline]
    pub fn face(&self, axis: usize) -> T {
        match axis {
            0 => self.xm,
            1 => self.ym,
            _ => self.zm,
        }
    }

    #[inline]
    pub fn face_mut(&mut self, axis: usize) -> &mut T {
        match axis {
            0 => &mut self.xm,
            1 => &mut self.ym,
            _ => &mut self.zm,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("kinds cover {got} cells on level {level}, grid has {want}")]
    KindShape { level: u32, got: usize, want: usize },
    #[error("face area {area} outside [0, h²] at {face:?}")]
    BadArea { face: FaceGeom, area: f64 },
}
