use crate::scene::SceneSdf;
use serde::{Deserialize, Serialize};

/// Axis-aligned square face of edge `h` with lower corner `lo`, normal to `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceGeom {
    pub axis: usize,
    pub lo: [f64; 3],
    pub h: f64,
}

impl FaceGeom {
    /// Corners in counter-clockwise order in the (axis+1, axis+2) plane.
    pub fn corners(&self) -> [[f64; 3]; 4] {
        let (b, c) = ((self.axis + 1) % 3, (self.axis + 2) % 3);
        let at = |db: f64, dc: f64| {
            let mut p = self.lo;
            p[b] += db * self.h;
            p[c] += dc * self.h;
            p
        };
        [at(0.0, 0.0), at(1.0, 0.0), at(1.0, 1.0), at(0.0, 1.0)]
    }

    pub fn center(&self) -> [f64; 3] {
        let (b, c) = ((self.axis + 1) % 3, (self.axis + 2) % 3);
        let mut p = self.lo;
        p[b] += 0.5 * self.h;
        p[c] += 0.5 * self.h;
        p
    }
}

/// `h² ×` the fraction of the face where `solid_phi ≥ 0`.
pub fn face_fluid_area(scene: &SceneSdf, face: &FaceGeom) -> f64 {
    if scene.solid.is_none() {
        return face.h * face.h;
    }
    let v = face.corners().map(|p| scene.solid_phi(p));
    let center = if v.iter().all(|&x| x >= 0.0) || v.iter().all(|&x| x < 0.0) {
        0.0
    } else {
        scene.solid_phi(face.center())
    };
    face.h * face.h * fluid_fraction(v, center)
}

/// Marching-squares area of `{φ ≥ 0}` on the unit square, given corner
/// samples in counter-clockwise order. Linear interpolation along edges; the
/// saddle case is connected iff `center ≥ 0`.
pub fn fluid_fraction(v: [f64; 4], center: f64) -> f64 {
    let inside = v.map(|x| x >= 0.0);
    let n = inside.iter().filter(|&&b| b).count();
    if n == 4 {
        return 1.0;
    }
    if n == 0 {
        return 0.0;
    }
    const P: [[f64; 2]; 4] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    // Crossing point on edge i → i+1.
    let cross = |i: usize| {
        let j = (i + 1) % 4;
        let t = v[i] / (v[i] - v[j]);
        [
            P[i][0] + t * (P[j][0] - P[i][0]),
            P[i][1] + t * (P[j][1] - P[i][1]),
        ]
    };
    let area = if n == 2 && inside[0] == inside[2] && center < 0.0 {
        // Two separate fluid corners.
        (0..4)
            .filter(|&i| inside[i])
            .map(|i| triangle_area(P[i], cross(i), cross((i + 3) % 4)))
            .sum()
    } else {
        let mut poly: Vec<[f64; 2]> = Vec::with_capacity(8);
        for i in 0..4 {
            if inside[i] {
                poly.push(P[i]);
            }
            if inside[i] != inside[(i + 1) % 4] {
                poly.push(cross(i));
            }
        }
        shoelace(&poly)
    };
    area.clamp(0.0, 1.0)
}

fn triangle_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
}

fn shoelace(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    0.5 * twice.abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Shape;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trivial_fractions() {
        assert_eq!(fluid_fraction([1.0; 4], 1.0), 1.0);
        assert_eq!(fluid_fraction([-1.0; 4], -1.0), 0.0);
    }

    #[test]
    fn straight_interface_halves_the_face() {
        assert_abs_diff_eq!(fluid_fraction([1.0, 1.0, -1.0, -1.0], 0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(fluid_fraction([1.0, -1.0, -1.0, 1.0], 0.0), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn single_corner_triangle() {
        // Corner 0 at +1, others at −1: crossings at t = 1/2 on both edges.
        assert_abs_diff_eq!(
            fluid_fraction([1.0, -1.0, -1.0, -1.0], -0.5),
            0.125,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(fluid_fraction([-1.0, 1.0, 1.0, 1.0], 0.5), 0.875, epsilon = 1e-15);
    }

    #[test]
    fn saddle_uses_center_sign() {
        let v = [1.0, -1.0, 1.0, -1.0];
        assert_abs_diff_eq!(fluid_fraction(v, -1.0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(fluid_fraction(v, 1.0), 0.75, epsilon = 1e-15);
    }

    #[test]
    fn half_space_cut_face_area() {
        // Solid where x < 0.25; the face spans x ∈ [0, h].
        let scene = SceneSdf {
            solid: Some(Shape::HalfSpace {
                normal: [1.0, 0.0, 0.0],
                offset: 0.25,
            }),
            air: None,
        };
        let f = FaceGeom {
            axis: 2,
            lo: [0.0, 0.0, 0.5],
            h: 1.0,
        };
        assert_abs_diff_eq!(face_fluid_area(&scene, &f), 0.75, epsilon = 1e-15);
        let g = FaceGeom { h: 0.5, ..f };
        assert_abs_diff_eq!(face_fluid_area(&scene, &g), 0.25 * 0.5, epsilon = 1e-15);
    }
}
