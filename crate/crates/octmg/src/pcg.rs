//! Preconditioned conjugate gradient over the composite leaf system.
//!
//! Vectors are [`Field`]s whose leaf rows carry the data; other entries are
//! scratch. Reductions accumulate in `f64`, per leaf tile in parallel and
//! then across tiles in a fixed order, so results are bit-reproducible.

use crate::cycle::{precondition, CycleConfig, CycleScratch};
use crate::grid::TILE_CELLS;
use crate::hierarchy::{Field, Hierarchy};
use crate::operator::apply_composite;
use crate::scalar::Real;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Preconditioner {
    #[default]
    MuCycle,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub tol_relative: f64,
    pub max_iters: usize,
    pub precondition: Preconditioner,
    pub nullspace_projection: bool,
    pub cycle: CycleConfig,
    /// Iterations without a new best residual before giving up.
    pub stagnation_window: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol_relative: 1e-6,
            max_iters: 200,
            precondition: Preconditioner::MuCycle,
            nullspace_projection: false,
            cycle: CycleConfig::default(),
            stagnation_window: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// `⟨p, Ap⟩ ≤ 0`; the best iterate so far is returned.
    Breakdown,
    /// No new best residual within the stagnation window.
    Stagnation,
    ZeroRhs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// `‖r‖₂` after each iteration.
    pub residual_history: Vec<f64>,
    pub initial_residual: f64,
    pub converged: bool,
    pub termination: Termination,
    pub wall_time_s: f64,
}

impl SolveReport {
    pub fn relative_history(&self) -> Vec<f64> {
        self.residual_history
            .iter()
            .map(|r| r / self.initial_residual)
            .collect()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("non-finite value at iteration {0}")]
    NonFinite(usize),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}

/// `Σ v·w` over active leaf cells, accumulated in `f64`.
pub fn dot<T: Real>(h: &Hierarchy<T>, v: &Field<T>, w: &Field<T>) -> f64 {
    let partial: Vec<f64> = h
        .leaf_slots()
        .par_iter()
        .map(|&(l, s)| {
            let base = s as usize * TILE_CELLS;
            let co = &h.coeffs(l)[base..base + TILE_CELLS];
            let a = &v.levels[l as usize][base..base + TILE_CELLS];
            let b = &w.levels[l as usize][base..base + TILE_CELLS];
            let mut acc = 0.0;
            for k in 0..TILE_CELLS {
                if co[k].is_active() {
                    acc += a[k].as_f64() * b[k].as_f64();
                }
            }
            acc
        })
        .collect();
    partial.iter().sum()
}

pub fn norm2<T: Real>(h: &Hierarchy<T>, v: &Field<T>) -> f64 {
    dot(h, v, v).sqrt()
}

/// Subtracts the mean over active leaf cells.
pub fn project_nullspace<T: Real>(h: &Hierarchy<T>, v: &mut Field<T>) {
    let (sum, n) = h
        .leaf_slots()
        .iter()
        .map(|&(l, s)| {
            let base = s as usize * TILE_CELLS;
            let co = &h.coeffs(l)[base..base + TILE_CELLS];
            let a = &v.levels[l as usize][base..base + TILE_CELLS];
            let mut acc = 0.0;
            let mut n = 0usize;
            for k in 0..TILE_CELLS {
                if co[k].is_active() {
                    acc += a[k].as_f64();
                    n += 1;
                }
            }
            (acc, n)
        })
        .fold((0.0, 0), |(a, m), (b, n)| (a + b, m + n));
    if n == 0 {
        return;
    }
    let mean = T::of(sum / n as f64);
    for_each_active(h, v, |x| *x -= mean);
}

/// True when the constant vector is in the kernel of the composite operator.
pub fn has_constant_nullspace<T: Real>(h: &Hierarchy<T>) -> bool {
    let mut one = h.new_field();
    for_each_active(h, &mut one, |x| *x = T::one());
    let mut out = h.new_field();
    apply_composite(h, &mut one, &mut out);
    let scale: f64 = h
        .leaf_slots()
        .iter()
        .map(|&(l, s)| {
            let base = s as usize * TILE_CELLS;
            h.coeffs(l)[base..base + TILE_CELLS]
                .iter()
                .map(|c| c.c.as_f64().abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    let tol = T::epsilon().as_f64() * 64.0 * scale;
    let worst = h
        .leaf_slots()
        .iter()
        .flat_map(|&(l, s)| {
            let base = s as usize * TILE_CELLS;
            out.levels[l as usize][base..base + TILE_CELLS].iter().copied()
        })
        .map(|x| x.as_f64().abs())
        .fold(0.0, f64::max);
    worst <= tol
}

fn for_each_active<T: Real>(h: &Hierarchy<T>, v: &mut Field<T>, mut f: impl FnMut(&mut T)) {
    for &(l, s) in h.leaf_slots() {
        let base = s as usize * TILE_CELLS;
        let co = &h.coeffs(l)[base..base + TILE_CELLS];
        let a = &mut v.levels[l as usize][base..base + TILE_CELLS];
        for k in 0..TILE_CELLS {
            if co[k].is_active() {
                f(&mut a[k]);
            }
        }
    }
}

/// `y ← y + a·x` on active leaf rows.
fn axpy<T: Real>(h: &Hierarchy<T>, a: T, x: &Field<T>, y: &mut Field<T>) {
    zip_leaf(h, x, y, |x, y| *y += a * x);
}

fn zip_leaf<T: Real>(h: &Hierarchy<T>, x: &Field<T>, y: &mut Field<T>, f: impl Fn(T, &mut T) + Sync) {
    for l in h.grid().l_min()..=h.finest() {
        let co = h.coeffs(l);
        y.levels[l as usize]
            .par_iter_mut()
            .zip(x.levels[l as usize].par_iter())
            .zip(co.par_iter())
            .for_each(|((y, &x), c)| {
                if c.is_active() {
                    f(x, y);
                }
            });
    }
}

fn all_finite<T: Real>(h: &Hierarchy<T>, v: &Field<T>) -> bool {
    h.leaf_slots().iter().all(|&(l, s)| {
        let base = s as usize * TILE_CELLS;
        v.levels[l as usize][base..base + TILE_CELLS]
            .iter()
            .all(|x| x.is_finite())
    })
}

/// Solves `A x = b` from `x = 0`.
pub fn pcg_solve<T: Real>(
    h: &Hierarchy<T>,
    b: &Field<T>,
    cfg: &SolveConfig,
) -> Result<(Field<T>, SolveReport), SolveError> {
    pcg_solve_observed(h, b, cfg, |_, _| {})
}

/// As [`pcg_solve`], calling `observe(iteration, x)` after every update.
pub fn pcg_solve_observed<T: Real>(
    h: &Hierarchy<T>,
    b: &Field<T>,
    cfg: &SolveConfig,
    mut observe: impl FnMut(usize, &Field<T>),
) -> Result<(Field<T>, SolveReport), SolveError> {
    if cfg.tol_relative.is_nan() || cfg.tol_relative <= 0.0 {
        return Err(SolveError::InvalidConfig(format!(
            "tol_relative must be positive, got {}",
            cfg.tol_relative
        )));
    }
    if cfg.cycle.mu == 0 {
        return Err(SolveError::InvalidConfig("mu must be at least 1".into()));
    }
    let start = Instant::now();
    let mut x = h.new_field();
    let mut r = h.new_field();
    zip_leaf(h, b, &mut r, |b, r| *r = b);
    if cfg.nullspace_projection {
        project_nullspace(h, &mut r);
    }
    if !all_finite(h, &r) {
        return Err(SolveError::NonFinite(0));
    }
    let r0 = norm2(h, &r);
    let mut report = SolveReport {
        iterations: 0,
        residual_history: Vec::new(),
        initial_residual: r0,
        converged: true,
        termination: Termination::ZeroRhs,
        wall_time_s: 0.0,
    };
    if r0 == 0.0 {
        report.wall_time_s = start.elapsed().as_secs_f64();
        return Ok((x, report));
    }
    let target = cfg.tol_relative * r0;
    let mut scratch = match cfg.precondition {
        Preconditioner::MuCycle => Some(CycleScratch::new(h)),
        Preconditioner::Identity => None,
    };
    let mut z = h.new_field();
    let mut apply_m = |r: &Field<T>, z: &mut Field<T>| match scratch.as_mut() {
        Some(s) => precondition(h, &cfg.cycle, s, r, z),
        None => zip_leaf(h, r, z, |r, z| *z = r),
    };
    apply_m(&r, &mut z);
    let mut p = z.clone();
    let mut ap = h.new_field();
    let mut rz = dot(h, &r, &z);
    let mut best = (r0, x.clone());
    let mut since_best = 0;
    let mut termination = Termination::MaxIterations;
    for k in 1..=cfg.max_iters {
        apply_composite(h, &mut p, &mut ap);
        let pap = dot(h, &p, &ap);
        if !pap.is_finite() {
            return Err(SolveError::NonFinite(k));
        }
        if pap <= 0.0 {
            termination = Termination::Breakdown;
            break;
        }
        let alpha = rz / pap;
        axpy(h, T::of(alpha), &p, &mut x);
        axpy(h, T::of(-alpha), &ap, &mut r);
        if cfg.nullspace_projection {
            project_nullspace(h, &mut r);
        }
        let rn = norm2(h, &r);
        if !rn.is_finite() {
            return Err(SolveError::NonFinite(k));
        }
        report.iterations = k;
        report.residual_history.push(rn);
        observe(k, &x);
        if rn <= target {
            termination = Termination::Converged;
            best = (rn, x.clone());
            break;
        }
        if rn < best.0 {
            best = (rn, x.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.stagnation_window {
                termination = Termination::Stagnation;
                break;
            }
        }
        apply_m(&r, &mut z);
        let rz_new = dot(h, &r, &z);
        let beta = T::of(rz_new / rz);
        rz = rz_new;
        zip_leaf(h, &z, &mut p, |z, p| *p = z + beta * *p);
    }
    if termination != Termination::Converged && termination != Termination::MaxIterations {
        x = best.1;
    }
    report.converged = termination == Termination::Converged;
    report.termination = termination;
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::AdaptiveGrid;
    use crate::hierarchy::HierarchyConfig;
    use crate::operator::{assemble_coeffs, classify_cells, BoundaryPolicy, Wall};
    use crate::scene::SceneSdf;
    use std::sync::Arc;

    fn hierarchy(wall: Wall, level: u32) -> Hierarchy<f64> {
        let g = Arc::new(AdaptiveGrid::uniform([1, 1, 1], level).unwrap());
        let scene = SceneSdf::default();
        let policy = BoundaryPolicy::uniform(wall);
        let k = classify_cells(&g, &scene);
        let c = assemble_coeffs(&g, &k, &scene, &policy);
        Hierarchy::build(g, k, c, policy, &HierarchyConfig::default()).unwrap()
    }

    #[test]
    fn zero_rhs_takes_no_iterations() {
        let h = hierarchy(Wall::Dirichlet, 0);
        let (x, rep) = pcg_solve(&h, &h.new_field(), &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.termination, Termination::ZeroRhs);
        assert!(x.levels[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_removes_the_mean() {
        let h = hierarchy(Wall::Neumann, 0);
        let mut v = h.new_field();
        v.levels[0][0] = 1.0;
        v.levels[0][1] = 3.0;
        project_nullspace(&h, &mut v);
        let mean: f64 = v.levels[0].iter().sum::<f64>() / 512.0;
        assert!(mean.abs() < 1e-15);
        let once = v.clone();
        project_nullspace(&h, &mut v);
        for (a, b) in v.levels[0].iter().zip(&once.levels[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn neumann_box_has_a_constant_kernel() {
        assert!(has_constant_nullspace(&hierarchy(Wall::Neumann, 1)));
        assert!(!has_constant_nullspace(&hierarchy(Wall::Dirichlet, 0)));
    }

    #[test]
    fn preconditioned_solve_converges_fast() {
        let h = hierarchy(Wall::Dirichlet, 1);
        let mut b = h.new_field();
        for (i, v) in b.levels[1].iter_mut().enumerate() {
            *v = ((i * 13 % 29) as f64 - 14.0) * 1e-3;
        }
        let cfg = SolveConfig {
            tol_relative: 1e-8,
            ..Default::default()
        };
        let (_, rep) = pcg_solve(&h, &b, &cfg).unwrap();
        assert!(rep.converged);
        assert!(rep.iterations <= 12, "{}", rep.iterations);
        let id = SolveConfig {
            precondition: Preconditioner::Identity,
            max_iters: 2000,
            ..cfg
        };
        let (_, plain) = pcg_solve(&h, &b, &id).unwrap();
        assert!(plain.converged);
        assert!(plain.iterations > rep.iterations);
    }
}
