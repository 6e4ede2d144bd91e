//! Procedural meshes: cube, icosphere and the bumpy "pseudo-sinus" cavity.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

use super::TriangleMesh;

/// Axis-aligned cube `[-h, h]³` with outward normals.
pub fn cube(half: f64) -> TriangleMesh {
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        let s = |bit: usize| if i & bit != 0 { half } else { -half };
        v.push(Vec3::new(s(1), s(2), s(4)));
    }
    // vertex i: x = bit0, y = bit1, z = bit2
    let quads = [
        [0, 2, 3, 1], // z-
        [4, 5, 7, 6], // z+
        [0, 1, 5, 4], // y-
        [2, 6, 7, 3], // y+
        [0, 4, 6, 2], // x-
        [1, 3, 7, 5], // x+
    ];
    let mut tris = Vec::with_capacity(12);
    for q in quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    TriangleMesh::new(v, tris).expect("cube is valid")
}

/// Unit-direction icosphere vertices and outward-wound faces.
fn icosphere_directions(subdivisions: u32) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

/// Sphere of the given radius with outward normals; `20·4^s` faces.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let (dirs, faces) = icosphere_directions(subdivisions);
    TriangleMesh::new(dirs.into_iter().map(|d| d * radius).collect(), faces).expect("icosphere is valid")
}

/// Sphere with inward normals, i.e. a cavity viewed from inside.
pub fn icosphere_cavity(subdivisions: u32, radius: f64) -> TriangleMesh {
    icosphere(subdivisions, radius).flipped().expect("flipped icosphere is valid")
}

/// Parameters of the built-in closed cavity: an ellipsoid whose wall carries
/// Gaussian bumps protruding into the cavity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CavitySpec {
    pub semi_axes: [f64; 3],
    pub subdivisions: u32,
    pub bump_count: usize,
    /// Largest inward displacement as a fraction of the local radius.
    pub bump_amplitude: f64,
    /// Angular bump width range, radians.
    pub bump_width: [f64; 2],
    pub seed: u64,
}

impl Default for CavitySpec {
    fn default() -> Self {
        Self {
            semi_axes: [32.0, 16.0, 16.0],
            subdivisions: 5,
            bump_count: 40,
            bump_amplitude: 0.4,
            bump_width: [0.12, 0.25],
            seed: 1,
        }
    }
}

/// Star-shaped bumpy ellipsoid with inward-facing normals. Bumps stay clear
/// of the long axis so cameras near it remain interior.
pub fn pseudo_sinus(spec: &CavitySpec) -> TriangleMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bumps: Vec<(Vec3, f64, f64)> = (0..spec.bump_count)
        .map(|_| {
            // centers biased toward the side walls
            let x: f64 = rng.random_range(-0.85..0.85);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - x * x).sqrt();
            let dir = Vec3::new(x, r * ang.cos(), r * ang.sin());
            let amp = spec.bump_amplitude * rng.random_range(0.5..1.0);
            let width = rng.random_range(spec.bump_width[0]..spec.bump_width[1]);
            (dir, amp, width)
        })
        .collect();
    let (dirs, faces) = icosphere_directions(spec.subdivisions);
    let [a, b, c] = spec.semi_axes;
    let verts = dirs
        .iter()
        .map(|u| {
            let dent: f64 = bumps
                .iter()
                .map(|(d, amp, w)| {
                    let ang = u.dot(d).clamp(-1.0, 1.0).acos();
                    amp * (-0.5 * (ang / w).powi(2)).exp()
                })
                .sum();
            let shrink = (1.0 - dent).max(0.45);
            Vec3::new(a * u.x, b * u.y, c * u.z) * shrink
        })
        .collect();
    TriangleMesh::new(verts, faces)
        .and_then(|m| m.flipped())
        .expect("pseudo-sinus cavity is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts_and_orientation() {
        let s = icosphere(2, 3.0);
        assert_eq!(s.face_count(), 320);
        assert!(s.is_closed());
        for f in 0..s.face_count() {
            assert!(s.face_normal(f).dot(&s.face_center(f)) > 0.0);
        }
        let cav = icosphere_cavity(2, 3.0);
        for f in 0..cav.face_count() {
            assert!(cav.face_normal(f).dot(&cav.face_center(f)) < 0.0);
        }
    }

    #[test]
    fn cavity_is_closed_and_inward() {
        let spec = CavitySpec {
            subdivisions: 3,
            ..CavitySpec::default()
        };
        let m = pseudo_sinus(&spec);
        assert!(m.is_closed());
        let inward = (0..m.face_count())
            .filter(|&f| m.face_normal(f).dot(&m.face_center(f)) < 0.0)
            .count();
        assert!(inward as f64 > 0.9 * m.face_count() as f64);
    }

    #[test]
    fn cavity_is_deterministic() {
        let spec = CavitySpec {
            subdivisions: 2,
            ..CavitySpec::default()
        };
        assert_eq!(pseudo_sinus(&spec).vertices(), pseudo_sinus(&spec).vertices());
    }
}
