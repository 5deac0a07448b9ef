//! Accuracy and convergence experiments on unit-cube scenes.
//!
//! Every runner returns metric rows (deterministic for a given config) and
//! solver reports (which carry wall-clock time and are kept out of CSV).

use crate::metrics::{fit_rate, fit_reduction_factor, mean_reduction_factor, plateau_iteration, rms_v};
use clap::ValueEnum;
use octmg::grid::{cell_size, local_coords, TILE, TILE_CELLS};
use octmg::operator::{apply_composite, assemble_coeffs, classify_cells, wall_coeff, FaceVelocity, MacFaces};
use octmg::oracle::{galerkin_mismatch, UniformPatch};
use octmg::pcg::{has_constant_nullspace, pcg_solve_observed};
use octmg::scene::{band_target_levels, tank_scene, BandTest};
use octmg::{
    AdaptiveGrid, BoundaryPolicy, CellIndex, CellKind, Coarsening, CycleConfig, Field, GridError, Hierarchy,
    HierarchyConfig, HierarchyError, Real, SceneSdf, Shape, SolveConfig, SolveError, SolveReport, TileKind,
    Wall,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

/// An RMS value within this factor of the final one counts as having
/// reached the discretization floor.
pub const PLATEAU_FACTOR: f64 = 1.25;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Metric(#[from] crate::metrics::MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    Uniform,
    Sphere,
    Star,
}

impl GridKind {
    pub fn label(self) -> &'static str {
        match self {
            GridKind::Uniform => "uniform",
            GridKind::Sphere => "sphere",
            GridKind::Star => "star",
        }
    }

    /// Shape whose zero level set drives refinement.
    pub fn shape(self) -> Option<Shape> {
        match self {
            GridKind::Uniform => None,
            GridKind::Sphere => Some(Shape::sphere()),
            GridKind::Star => Some(Shape::star()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Double,
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Laplacian,
    PoissonSin,
    ProjectionStatic,
    CycleCompare,
    GalerkinCheck,
}

/// Options shared by all experiments; unset solver fields take the
/// experiment's own default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub grids: Vec<GridKind>,
    pub l0: Vec<u32>,
    pub mu: Option<u32>,
    pub beta: Option<f64>,
    pub nu_level: u32,
    pub nu_base: u32,
    pub tol: Option<f64>,
    pub max_iters: usize,
    pub precision: Precision,
    pub band_test: BandTest,
    /// Randomized patches per size for the Galerkin check.
    pub cases: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grids: vec![GridKind::Uniform, GridKind::Sphere, GridKind::Star],
            l0: vec![1, 2, 3],
            mu: None,
            beta: None,
            nu_level: 2,
            nu_base: 10,
            tol: None,
            max_iters: 100,
            precision: Precision::Double,
            band_test: BandTest::CornerGuard,
            cases: 200,
            seed: 7,
        }
    }
}

impl ExperimentConfig {
    fn solve(&self, mu: u32, tol: f64) -> SolveConfig {
        SolveConfig {
            tol_relative: self.tol.unwrap_or(tol),
            max_iters: self.max_iters,
            cycle: CycleConfig {
                mu: self.mu.unwrap_or(mu),
                nu_level: self.nu_level,
                nu_base: self.nu_base,
                beta: self.beta.unwrap_or(2.0),
                beta_on_leaf_rows: false,
            },
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if self.l0.is_empty() || self.grids.is_empty() {
            return Err(ExperimentError::Config(
                "need at least one grid and one l0".into(),
            ));
        }
        if let Some(&l) = self.l0.iter().find(|&&l| l > 6) {
            return Err(ExperimentError::Config(format!("l0 = {l} is beyond desk scale")));
        }
        Ok(())
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub grid: String,
    pub l0: Option<u32>,
    pub root_cell_size: Option<f64>,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    fn at(grid: GridKind, l0: u32, metric: impl Into<String>, value: f64) -> Self {
        Self {
            grid: grid.label().into(),
            l0: Some(l0),
            root_cell_size: Some(cell_size(l0)),
            metric: metric.into(),
            value,
        }
    }

    fn series(grid: &str, metric: impl Into<String>, value: f64) -> Self {
        Self {
            grid: grid.into(),
            l0: None,
            root_cell_size: None,
            metric: metric.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub report: SolveReport,
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub rows: Vec<MetricRow>,
    pub reports: Vec<LabeledReport>,
    /// Labels of solves that did not reach their tolerance.
    pub unconverged: Vec<String>,
}

impl Outcome {
    pub fn value(&self, grid: &str, l0: Option<u32>, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.grid == grid && r.l0 == l0 && r.metric == metric)
            .map(|r| r.value)
    }

    fn record(&mut self, label: String, report: SolveReport) {
        if !report.converged {
            self.unconverged.push(label.clone());
        }
        self.reports.push(LabeledReport { label, report });
    }
}

/// Writes rows with a fixed header and full-precision values.
pub fn write_csv(rows: &[MetricRow], out: impl Write) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grid", "l0", "root_cell_size", "metric", "value"])?;
    for r in rows {
        w.write_record([
            r.grid.clone(),
            r.l0.map(|l| l.to_string()).unwrap_or_default(),
            r.root_cell_size.map(|h| format!("{h:.17e}")).unwrap_or_default(),
            r.metric.clone(),
            format!("{:.17e}", r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    cfg.validate()?;
    match (exp, cfg.precision) {
        (Experiment::Laplacian, Precision::Double) => run_laplacian::<f64>(cfg),
        (Experiment::Laplacian, Precision::Single) => run_laplacian::<f32>(cfg),
        (Experiment::PoissonSin, Precision::Double) => run_poisson_sin::<f64>(cfg),
        (Experiment::PoissonSin, Precision::Single) => run_poisson_sin::<f32>(cfg),
        (Experiment::ProjectionStatic, Precision::Double) => run_projection_static::<f64>(cfg),
        (Experiment::ProjectionStatic, Precision::Single) => run_projection_static::<f32>(cfg),
        (Experiment::CycleCompare, Precision::Double) => run_cycle_compare::<f64>(cfg),
        (Experiment::CycleCompare, Precision::Single) => run_cycle_compare::<f32>(cfg),
        (Experiment::GalerkinCheck, _) => run_galerkin_check(cfg),
    }
}

/// Band-refined (or uniform) octree over the unit cube.
pub fn build_grid(kind: GridKind, l0: u32, test: BandTest) -> Result<AdaptiveGrid, GridError> {
    match kind.shape() {
        None => AdaptiveGrid::uniform([1, 1, 1], l0),
        Some(s) => AdaptiveGrid::build([1, 1, 1], band_target_levels(&s, l0, test)),
    }
}

fn hierarchy<T: Real>(
    grid: Arc<AdaptiveGrid>,
    scene: &SceneSdf,
    policy: BoundaryPolicy,
    coarsening: Coarsening,
) -> Result<Hierarchy<T>, HierarchyError> {
    let kinds = classify_cells(&grid, scene);
    let coeffs = assemble_coeffs(&grid, &kinds, scene, &policy);
    let cfg = HierarchyConfig {
        coarsening,
        ..Default::default()
    };
    Hierarchy::build(grid, kinds, coeffs, policy, &cfg)
}

/// An active leaf cell with its geometry.
#[derive(Debug, Clone, Copy)]
struct Leaf {
    level: u32,
    slot: usize,
    idx: usize,
    center: [f64; 3],
    volume: f64,
    on_boundary: bool,
}

fn active_leaves<T: Real>(h: &Hierarchy<T>) -> Vec<Leaf> {
    let g = h.grid();
    let mut out = Vec::new();
    for &(l, s) in h.leaf_slots() {
        let s = s as usize;
        let t = g.tile(l, s as u32);
        let n = g.extent().map(|e| (e as u64 * TILE as u64) << l);
        for idx in 0..TILE_CELLS {
            if !h.coeff(l, s, idx).is_active() {
                continue;
            }
            let cell = CellIndex {
                tile: t.coord,
                offset: local_coords(idx).map(|o| o as u8),
            };
            let gl = cell.global();
            out.push(Leaf {
                level: l,
                slot: s,
                idx,
                center: cell.center(),
                volume: cell_size(l).powi(3),
                on_boundary: (0..3).any(|a| gl[a] == 0 || gl[a] + 1 == n[a]),
            });
        }
    }
    out
}

fn leaf_field<T: Real>(h: &Hierarchy<T>, leaves: &[Leaf], f: impl Fn(&Leaf) -> f64) -> Field<T> {
    let mut x = h.new_field();
    for c in leaves {
        *x.at_mut(c.level, c.slot, c.idx) = T::of(f(c));
    }
    x
}

/// Smooth test function for the operator accuracy study.
pub fn laplacian_test_fn(p: [f64; 3]) -> f64 {
    let [x, y, z] = p;
    (x * x + y * y + z * z) * (-x * y * z).exp()
}

/// Exact `∇²` of [`laplacian_test_fn`].
pub fn laplacian_test_lap(p: [f64; 3]) -> f64 {
    let [x, y, z] = p;
    let r2 = x * x + y * y + z * z;
    let q = x * x * y * y + y * y * z * z + z * z * x * x;
    (-x * y * z).exp() * (6.0 - 12.0 * x * y * z + r2 * q)
}

pub fn run_laplacian<T: Real>(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mut out = Outcome::default();
    for &kind in &cfg.grids {
        let mut series = Vec::new();
        for &l0 in &cfg.l0 {
            let grid = Arc::new(build_grid(kind, l0, cfg.band_test)?);
            let h: Hierarchy<T> = hierarchy(
                grid,
                &SceneSdf::default(),
                BoundaryPolicy::default(),
                Coarsening::Galerkin,
            )?;
            let leaves = active_leaves(&h);
            let mut f = leaf_field(&h, &leaves, |c| laplacian_test_fn(c.center));
            let mut af = h.new_field();
            apply_composite(&h, &mut f, &mut af);
            // Cells with a domain face carry the wall condition, not the stencil.
            let (err, vol): (Vec<f64>, Vec<f64>) = leaves
                .iter()
                .filter(|c| !c.on_boundary)
                .map(|c| {
                    let neg_lap = af.at(c.level, c.slot, c.idx).as_f64() / c.volume;
                    (neg_lap + laplacian_test_lap(c.center), c.volume)
                })
                .unzip();
            let e = rms_v(&err, &vol)?;
            out.rows.push(MetricRow::at(kind, l0, "rms_error", e));
            series.push((cell_size(l0), e));
        }
        if series.len() > 1 {
            out.rows
                .push(MetricRow::series(kind.label(), "rate", fit_rate(&series)?));
        }
    }
    Ok(out)
}

/// `sin 2πx · sin 2πy · sin 2πz`.
fn sss(p: [f64; 3]) -> f64 {
    p.iter().map(|&x| (2.0 * PI * x).sin()).product()
}

/// Analytic solution of `∇²φ = 4π sss` vanishing on the cube faces.
pub fn sin_solution(p: [f64; 3]) -> f64 {
    -sss(p) / (3.0 * PI)
}

fn solve_rows(out: &mut Outcome, kind: GridKind, l0: u32, rep: &SolveReport) -> Result<(), ExperimentError> {
    out.rows
        .push(MetricRow::at(kind, l0, "iterations", rep.iterations as f64));
    out.rows
        .push(MetricRow::at(kind, l0, "converged", rep.converged as u8 as f64));
    if !rep.residual_history.is_empty() && rep.initial_residual > 0.0 {
        let rel = rep.relative_history();
        out.rows.push(MetricRow::at(
            kind,
            l0,
            "fitted_reduction",
            fit_reduction_factor(&rel)?,
        ));
        out.rows.push(MetricRow::at(
            kind,
            l0,
            "mean_reduction",
            mean_reduction_factor(1.0, &rel)?,
        ));
        for (k, r) in rel.iter().enumerate() {
            out.rows.push(MetricRow::at(
                kind,
                l0,
                format!("relative_residual_it{:03}", k + 1),
                *r,
            ));
        }
    }
    Ok(())
}

pub fn run_poisson_sin<T: Real>(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mut out = Outcome::default();
    let solve = cfg.solve(1, 1e-8);
    for &kind in &cfg.grids {
        let mut series = Vec::new();
        for &l0 in &cfg.l0 {
            let grid = Arc::new(build_grid(kind, l0, cfg.band_test)?);
            let policy = BoundaryPolicy::uniform(Wall::DirichletFace);
            let h: Hierarchy<T> = hierarchy(grid, &SceneSdf::default(), policy, Coarsening::Galerkin)?;
            let leaves = active_leaves(&h);
            let b = leaf_field(&h, &leaves, |c| -4.0 * PI * sss(c.center) * c.volume);
            let cfg_here = SolveConfig {
                nullspace_projection: has_constant_nullspace(&h),
                ..solve
            };
            let vol: Vec<f64> = leaves.iter().map(|c| c.volume).collect();
            let exact: Vec<f64> = leaves.iter().map(|c| sin_solution(c.center)).collect();
            let shift = cfg_here.nullspace_projection;
            let error_of = |x: &Field<T>| -> f64 {
                let mut e: Vec<f64> = leaves
                    .iter()
                    .zip(&exact)
                    .map(|(c, ex)| x.at(c.level, c.slot, c.idx).as_f64() - ex)
                    .collect();
                if shift {
                    let total: f64 = vol.iter().sum();
                    let mean = e.iter().zip(&vol).map(|(e, v)| e * v).sum::<f64>() / total;
                    e.iter_mut().for_each(|x| *x -= mean);
                }
                rms_v(&e, &vol).unwrap_or(f64::NAN)
            };
            let mut history = Vec::new();
            let (x, rep) = pcg_solve_observed(&h, &b, &cfg_here, |_, x| history.push(error_of(x)))?;
            let e = error_of(&x);
            out.rows.push(MetricRow::at(kind, l0, "rms_error", e));
            solve_rows(&mut out, kind, l0, &rep)?;
            if let Some(k) = plateau_iteration(&history, PLATEAU_FACTOR) {
                out.rows
                    .push(MetricRow::at(kind, l0, "plateau_iteration", k as f64));
            }
            for (k, v) in history.iter().enumerate() {
                out.rows
                    .push(MetricRow::at(kind, l0, format!("rms_error_it{:03}", k + 1), *v));
            }
            out.record(format!("poisson_sin/{}/l0={l0}", kind.label()), rep);
            series.push((cell_size(l0), e));
        }
        if series.len() > 1 {
            out.rows
                .push(MetricRow::series(kind.label(), "rate", fit_rate(&series)?));
        }
    }
    Ok(out)
}

/// The tank used by the projection and cycle studies: liquid up to the top
/// root-cell layer, the grid's shape as a fixed obstacle.
fn tank_problem<T: Real>(
    kind: GridKind,
    l0: u32,
    test: BandTest,
    coarsening: Coarsening,
) -> Result<(Hierarchy<T>, SceneSdf), ExperimentError> {
    let grid = Arc::new(build_grid(kind, l0, test)?);
    let (scene, policy) = tank_scene(kind.shape(), 1.0 - cell_size(l0));
    let h = hierarchy(grid, &scene, policy, coarsening)?;
    Ok((h, scene))
}

fn divergence_rms<T: Real>(h: &Hierarchy<T>, mac: &MacFaces, leaves: &[Leaf], u: &FaceVelocity) -> f64 {
    let d = mac.divergence(u);
    let (e, v): (Vec<f64>, Vec<f64>) = leaves
        .iter()
        .filter(|c| h.kinds().get(c.level, c.slot as u32, c.idx) == CellKind::Fluid)
        .map(|c| (d.at(c.level, c.slot, c.idx), c.volume))
        .unzip();
    rms_v(&e, &v).unwrap_or(f64::NAN)
}

pub fn run_projection_static<T: Real>(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mut out = Outcome::default();
    let solve = cfg.solve(2, 1e-6);
    for &kind in &cfg.grids {
        if kind == GridKind::Uniform {
            continue;
        }
        let mut series = Vec::new();
        for &l0 in &cfg.l0 {
            let (h, scene) = tank_problem::<T>(kind, l0, cfg.band_test, Coarsening::Galerkin)?;
            let leaves = active_leaves(&h);
            let mac = MacFaces::build(&h, &scene);
            let u0 = mac.init([0.0, -1.0, 0.0]);
            let b = mac.rhs(&h, &u0);
            let cfg_here = SolveConfig {
                nullspace_projection: has_constant_nullspace(&h),
                ..solve
            };
            let project = |p: &Field<T>| {
                let mut u = u0.clone();
                mac.subtract_gradient(&h, &mut u, p);
                u
            };
            let mut history = Vec::new();
            let (p, rep) = pcg_solve_observed(&h, &b, &cfg_here, |_, p| {
                history.push(divergence_rms(&h, &mac, &leaves, &project(p)))
            })?;
            let div = divergence_rms(&h, &mac, &leaves, &project(&p));
            out.rows.push(MetricRow::at(kind, l0, "divergence_rms", div));
            out.rows.push(MetricRow::at(
                kind,
                l0,
                "initial_divergence_rms",
                divergence_rms(&h, &mac, &leaves, &u0),
            ));
            solve_rows(&mut out, kind, l0, &rep)?;
            if let Some(k) = plateau_iteration(&history, PLATEAU_FACTOR) {
                out.rows
                    .push(MetricRow::at(kind, l0, "plateau_iteration", k as f64));
            }
            for (k, v) in history.iter().enumerate() {
                out.rows.push(MetricRow::at(
                    kind,
                    l0,
                    format!("divergence_rms_it{:03}", k + 1),
                    *v,
                ));
            }
            out.record(format!("projection_static/{}/l0={l0}", kind.label()), rep);
            series.push((cell_size(l0), div));
        }
        if series.len() > 1 {
            out.rows
                .push(MetricRow::series(kind.label(), "rate", fit_rate(&series)?));
        }
    }
    Ok(out)
}

/// Solver variants of the cycle comparison: label, μ, coarsening.
pub const CYCLE_VARIANTS: [(&str, u32, Coarsening); 3] = [
    ("mu2", 2, Coarsening::Galerkin),
    ("mu1", 1, Coarsening::Galerkin),
    ("gmg_mu1", 1, Coarsening::Geometric),
];

pub fn run_cycle_compare<T: Real>(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mut out = Outcome::default();
    for &kind in &cfg.grids {
        if kind == GridKind::Uniform {
            continue;
        }
        for &l0 in &cfg.l0 {
            for (label, mu, coarsening) in CYCLE_VARIANTS {
                let (h, scene) = tank_problem::<T>(kind, l0, cfg.band_test, coarsening)?;
                let mac = MacFaces::build(&h, &scene);
                let b = mac.rhs(&h, &mac.init([0.0, -1.0, 0.0]));
                let mut solve = cfg.solve(mu, 1e-5);
                solve.cycle.mu = mu;
                // Run to the iteration cap so stalls are visible.
                solve.stagnation_window = solve.max_iters;
                solve.nullspace_projection = has_constant_nullspace(&h);
                let (_, rep) = pcg_solve_observed(&h, &b, &solve, |_, _| {})?;
                let grid = format!("{}/{label}", kind.label());
                let row = |metric: String, value: f64| MetricRow {
                    grid: grid.clone(),
                    l0: Some(l0),
                    root_cell_size: Some(cell_size(l0)),
                    metric,
                    value,
                };
                out.rows.push(row("iterations".into(), rep.iterations as f64));
                out.rows.push(row("converged".into(), rep.converged as u8 as f64));
                for (k, r) in rep.relative_history().iter().enumerate() {
                    out.rows
                        .push(row(format!("relative_residual_it{:03}", k + 1), *r));
                }
                // Not a failure of the run: the baseline is expected to stall.
                out.reports.push(LabeledReport {
                    label: format!("cycle_compare/{grid}/l0={l0}"),
                    report: rep,
                });
            }
        }
    }
    Ok(out)
}

/// A uniform patch with random kinds, cut areas and wall types.
pub fn random_patch(rng: &mut impl Rng, n: usize) -> UniformPatch {
    let h = 1.0 / n as f64;
    let len = n * n * n;
    let kinds: Vec<CellKind> = (0..len)
        .map(|_| match rng.gen_range(0..10) {
            0..=5 => CellKind::Fluid,
            6 | 7 => CellKind::Dirichlet,
            _ => CellKind::Neumann,
        })
        .collect();
    let areas: Vec<[f64; 3]> = (0..len)
        .map(|_| {
            [0; 3].map(|_| {
                if rng.gen_bool(0.5) {
                    h * h
                } else {
                    h * h * rng.gen_range(0.0..1.0)
                }
            })
        })
        .collect();
    let walls: Vec<[Wall; 6]> = (0..len)
        .map(|_| [0; 6].map(|_| [Wall::Neumann, Wall::Dirichlet, Wall::DirichletFace][rng.gen_range(0..3)]))
        .collect();
    let at = |p: [usize; 3]| p[0] + n * (p[1] + n * p[2]);
    UniformPatch::new(
        [n; 3],
        h,
        |p| kinds[at(p)],
        |a, p| areas[at(p)][a],
        |f, p, k| wall_coeff(walls[at(p)][f.index()], k, h * h, h),
    )
}

pub fn run_galerkin_check(cfg: &ExperimentConfig) -> Result<Outcome, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Outcome::default();
    for n in [4usize, 8] {
        let worst = (0..cfg.cases)
            .map(|_| galerkin_mismatch(&random_patch(&mut rng, n), 2.0))
            .fold(0.0, f64::max);
        let label = format!("patch{n}");
        out.rows
            .push(MetricRow::series(&label, "cases", cfg.cases as f64));
        out.rows
            .push(MetricRow::series(&label, "worst_relative_mismatch", worst));
    }
    Ok(out)
}

/// Leaf tiles per level of a grid, for reporting.
pub fn leaf_tiles_per_level(g: &AdaptiveGrid) -> Vec<(u32, usize)> {
    (g.l_min()..=g.l_max())
        .map(|l| (l, g.tiles(l).iter().filter(|t| t.kind == TileKind::Leaf).count()))
        .collect()
}
