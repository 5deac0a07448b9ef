//! Analytic signed-distance scenes and narrow-band refinement targets.

use crate::grid::{TileCoord, TILE};
use crate::operator::{BoundaryPolicy, Wall};
use serde::{Deserialize, Serialize};

/// Signed distance, negative inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// `r − (base_radius + amplitude·cos(fθ)·cos(fφ))` in spherical
    /// coordinates about `center`, θ the polar angle from +z and φ the
    /// azimuth in the xy-plane.
    Star {
        center: [f64; 3],
        base_radius: f64,
        amplitude: f64,
        frequency: f64,
    },
    /// `n·x − offset`; the solid side is `n·x < offset`.
    HalfSpace {
        normal: [f64; 3],
        offset: f64,
    },
    Complement(Box<Shape>),
    Union(Vec<Shape>),
}

impl Shape {
    pub fn sphere() -> Shape {
        Shape::Sphere {
            center: [0.5; 3],
            radius: 0.25,
        }
    }

    pub fn star() -> Shape {
        Shape::Star {
            center: [0.5; 3],
            base_radius: 0.237,
            amplitude: 0.079,
            frequency: 6.0,
        }
    }

    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self {
            Shape::Sphere { center, radius } => dist(p, *center) - radius,
            Shape::Star {
                center,
                base_radius,
                amplitude,
                frequency,
            } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                let theta = if r > 0.0 {
                    (d[2] / r).clamp(-1.0, 1.0).acos()
                } else {
                    0.0
                };
                let phi = d[1].atan2(d[0]);
                r - (base_radius + amplitude * (frequency * theta).cos() * (frequency * phi).cos())
            }
            Shape::HalfSpace { normal, offset } => {
                normal[0] * p[0] + normal[1] * p[1] + normal[2] * p[2] - offset
            }
            Shape::Complement(s) => -s.eval(p),
            Shape::Union(parts) => parts.iter().map(|s| s.eval(p)).fold(f64::INFINITY, f64::min),
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Solid and air level sets. Absent parts evaluate to +∞ (nowhere inside).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneSdf {
    pub solid: Option<Shape>,
    pub air: Option<Shape>,
}

impl SceneSdf {
    pub fn solid_phi(&self, p: [f64; 3]) -> f64 {
        self.solid.as_ref().map_or(f64::INFINITY, |s| s.eval(p))
    }

    pub fn air_phi(&self, p: [f64; 3]) -> f64 {
        self.air.as_ref().map_or(f64::INFINITY, |s| s.eval(p))
    }
}

/// How a tile decides that it meets the zero level set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BandTest {
    /// Sign change over the 8 corners and the center, or |φ(center)| below
    /// the half-diagonal.
    #[default]
    CornerGuard,
    /// Sign change over the tile's 9³ lattice of cell corners.
    CellLattice,
}

/// Tiles meeting the zero level set target `l0 + 2`, all others `l0`.
pub fn band_target_levels(shape: &Shape, l0: u32, test: BandTest) -> impl Fn(TileCoord) -> i64 + '_ {
    move |t| {
        if tile_intersects(shape, t, test) {
            l0 as i64 + 2
        } else {
            l0 as i64
        }
    }
}

pub fn tile_intersects(shape: &Shape, t: TileCoord, test: BandTest) -> bool {
    let lo = t.lower_corner();
    let s = t.size();
    let at = |f: [f64; 3]| shape.eval([lo[0] + f[0] * s, lo[1] + f[1] * s, lo[2] + f[2] * s]);
    match test {
        BandTest::CornerGuard => {
            let c = at([0.5; 3]);
            if c.abs() < 0.5 * 3f64.sqrt() * s {
                return true;
            }
            let mut neg = c < 0.0;
            let mut pos = c >= 0.0;
            for o in 0..8 {
                let v = at([(o & 1) as f64, ((o >> 1) & 1) as f64, ((o >> 2) & 1) as f64]);
                neg |= v < 0.0;
                pos |= v >= 0.0;
            }
            neg && pos
        }
        BandTest::CellLattice => {
            let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
            let n = TILE as f64;
            for k in 0..=TILE {
                for j in 0..=TILE {
                    for i in 0..=TILE {
                        let v = at([i as f64 / n, j as f64 / n, k as f64 / n]);
                        lo_v = lo_v.min(v);
                        hi_v = hi_v.max(v);
                    }
                }
            }
            lo_v < 0.0 && hi_v > 0.0
        }
    }
}

/// Unit tank with solid sides and bottom, air above `surface_height` (y up)
/// and an optional obstacle.
pub fn tank_scene(obstacle: Option<Shape>, surface_height: f64) -> (SceneSdf, BoundaryPolicy) {
    let wall = |normal: [f64; 3], offset: f64| Shape::HalfSpace { normal, offset };
    let mut solids = vec![
        wall([1.0, 0.0, 0.0], 0.0),
        wall([-1.0, 0.0, 0.0], -1.0),
        wall([0.0, 1.0, 0.0], 0.0),
        wall([0.0, 0.0, 1.0], 0.0),
        wall([0.0, 0.0, -1.0], -1.0),
    ];
    solids.extend(obstacle);
    let scene = SceneSdf {
        solid: Some(Shape::Union(solids)),
        air: Some(wall([0.0, -1.0, 0.0], -surface_height)),
    };
    let mut policy = BoundaryPolicy::uniform(Wall::Neumann);
    policy.walls[crate::grid::Face::YPlus.index()] = Wall::Dirichlet;
    (scene, policy)
}
