//! Multigrid-preconditioned conjugate gradient for the Poisson equation on
//! graded octrees of 8³ tiles, with cut-cell boundaries.
//!
//! The pipeline is: build an [`AdaptiveGrid`], classify cells against a
//! [`SceneSdf`], assemble leaf coefficients, build a [`Hierarchy`] of
//! Galerkin-coarsened levels, and call [`pcg_solve`].

pub mod cycle;
pub mod grid;
pub mod hierarchy;
pub mod operator;
pub mod oracle;
pub mod pcg;
pub mod scalar;
pub mod scene;

pub use cycle::{CycleConfig, SweepOrder};
pub use grid::{AdaptiveGrid, CellIndex, GridDescription, GridError, TileCoord, TileKind};
pub use hierarchy::{Coarsening, Field, Hierarchy, HierarchyConfig, HierarchyError};
pub use operator::{BoundaryPolicy, CellCoeffs, CellKind, Wall};
pub use pcg::{pcg_solve, Preconditioner, SolveConfig, SolveError, SolveReport, Termination};
pub use scalar::Real;
pub use scene::{SceneSdf, Shape};
