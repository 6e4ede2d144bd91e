//! Software z-buffer and visible occluding-contour sampling.
//!
//! Pixel `(i, j)` has its center at image coordinates `(i, j)`.

use crate::camera::{image_orientation, Camera};
use crate::geometry::{Vec2, Vec3};
use crate::mesh::{OccludingEdge, TriangleMesh};

/// Near clipping plane for rasterization and contour sampling, mm.
pub const NEAR_PLANE: f64 = 1e-3;

/// Default slack of the contour visibility test, mm.
pub const DEFAULT_VISIBILITY_TOLERANCE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct DepthBuffer {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

impl DepthBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, i: u32, j: u32) -> f64 {
        self.depth[j as usize * self.width as usize + i as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.depth
    }

    /// Depth at the pixel containing `p`; `+∞` outside the image.
    pub fn at(&self, p: &Vec2) -> f64 {
        let i = (p.x + 0.5).floor();
        let j = (p.y + 0.5).floor();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return f64::INFINITY;
        }
        self.get(i as u32, j as u32)
    }

    pub fn covered_pixels(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    /// 8-bit binary PGM; near is dark, background white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (lo, hi) = self
            .depth
            .iter()
            .filter(|d| d.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.depth.iter().map(|&d| {
            if d.is_finite() {
                (((d - lo) / span) * 254.0).round() as u8
            } else {
                255
            }
        }));
        out
    }

    fn test_and_set(&mut self, i: usize, j: usize, z: f64) {
        let slot = &mut self.depth[j * self.width as usize + i];
        if z < *slot {
            *slot = z;
        }
    }
}

/// Clips a camera-space polygon against `z >= NEAR_PLANE`.
fn clip_near(poly: &[Vec3]) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}

/// Per-pixel nearest depth of `mesh` seen by `camera`.
pub fn render_depth(mesh: &TriangleMesh, camera: &Camera) -> DepthBuffer {
    let k = camera.intrinsics;
    let mut buffer = DepthBuffer::new(k.width, k.height);
    let verts: Vec<Vec3> = mesh.vertices().iter().map(|v| camera.to_camera(v)).collect();
    for tri in mesh.triangles() {
        let pc = tri.map(|i| verts[i]);
        if pc.iter().all(|p| p.z < NEAR_PLANE) {
            continue;
        }
        if pc.iter().all(|p| p.z >= NEAR_PLANE) {
            raster_triangle(&mut buffer, camera, &pc);
        } else {
            let poly = clip_near(&pc);
            for i in 1..poly.len().saturating_sub(1) {
                raster_triangle(&mut buffer, camera, &[poly[0], poly[i], poly[i + 1]]);
            }
        }
    }
    buffer
}

fn raster_triangle(buffer: &mut DepthBuffer, camera: &Camera, pc: &[Vec3; 3]) {
    let k = camera.intrinsics;
    let s: [Vec2; 3] = pc.map(|p| Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy));
    let inv_z = pc.map(|p| 1.0 / p.z);
    let area = (s[1] - s[0]).perp(&(s[2] - s[0]));
    if !(area.abs() > 1e-12) {
        return;
    }
    let min_x = s.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_x = s
        .iter()
        .map(|p| p.x)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min(k.width as f64 - 1.0);
    let min_y = s.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).ceil().max(0.0);
    let max_y = s
        .iter()
        .map(|p| p.y)
        .fold(f64::NEG_INFINITY, f64::max)
        .floor()
        .min(k.height as f64 - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }
    let inv_area = 1.0 / area;
    for j in min_y as usize..=max_y as usize {
        for i in min_x as usize..=max_x as usize {
            let p = Vec2::new(i as f64, j as f64);
            let b0 = (s[2] - s[1]).perp(&(p - s[1])) * inv_area;
            let b1 = (s[0] - s[2]).perp(&(p - s[2])) * inv_area;
            let b2 = 1.0 - b0 - b1;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let w = b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2];
            buffer.test_and_set(i, j, 1.0 / w);
        }
    }
}

/// One visible sample of a model occluding contour.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourSample {
    pub edge: usize,
    pub model_point: Vec3,
    /// Contour normal in model coordinates, orthogonal to the optical axis.
    pub model_normal: Vec3,
    pub pixel: Vec2,
    pub image_normal: Vec2,
    pub depth: f64,
}

/// Liang–Barsky clip of segment `a→b` to the image rectangle; returns the
/// parameter range kept.
fn clip_to_image(a: &Vec2, b: &Vec2, width: u32, height: u32) -> Option<(f64, f64)> {
    let (x0, y0) = (-0.5, -0.5);
    let (x1, y1) = (width as f64 - 0.5, height as f64 - 0.5);
    let d = b - a;
    let mut t0: f64 = 0.0;
    let mut t1: f64 = 1.0;
    for (p, q) in [
        (-d.x, a.x - x0),
        (d.x, x1 - a.x),
        (-d.y, a.y - y0),
        (d.y, y1 - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 <= t1).then_some((t0, t1))
}

/// Samples every occluding edge at ≤ 1 px spacing and keeps the samples that
/// pass the depth test against `depth` within `tolerance` mm.
pub fn visible_contours(
    camera: &Camera,
    edges: &[OccludingEdge],
    depth: &DepthBuffer,
    tolerance: f64,
) -> Vec<ContourSample> {
    let k = camera.intrinsics;
    let rot = camera.extrinsic.rotation;
    let mut out = Vec::new();
    for e in edges {
        let mut n_cam = rot * e.surface_normal;
        n_cam.z = 0.0;
        let Ok(image_normal) = image_orientation(&k, &n_cam) else {
            continue;
        };
        let n_cam = n_cam.normalize();
        let model_normal = rot.transpose() * n_cam;

        let mut a = camera.to_camera(&e.endpoints[0]);
        let mut b = camera.to_camera(&e.endpoints[1]);
        if a.z < NEAR_PLANE && b.z < NEAR_PLANE {
            continue;
        }
        if a.z < NEAR_PLANE || b.z < NEAR_PLANE {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let p = a + (b - a) * t;
            if a.z < NEAR_PLANE {
                a = p;
            } else {
                b = p;
            }
        }
        let (Ok(sa), Ok(sb)) = (camera.project_camera_point(&a), camera.project_camera_point(&b)) else {
            continue;
        };
        let Some((u0, u1)) = clip_to_image(&sa, &sb, k.width, k.height) else {
            continue;
        };
        let span = (sb - sa).norm() * (u1 - u0);
        let steps = span.ceil().max(1.0) as usize;
        let (wa, wb) = (1.0 / a.z, 1.0 / b.z);
        for s in 0..=steps {
            let u = u0 + (u1 - u0) * s as f64 / steps as f64;
            // screen-space parameter to camera-space parameter
            let t = u * wb / ((1.0 - u) * wa + u * wb);
            let pc = a + (b - a) * t;
            let Ok(pixel) = camera.project_camera_point(&pc) else {
                continue;
            };
            if !k.contains(&pixel) {
                continue;
            }
            if pc.z <= depth.at(&pixel) + tolerance {
                out.push(ContourSample {
                    edge: e.edge,
                    model_point: rot.transpose() * (pc - camera.extrinsic.translation),
                    model_normal,
                    pixel,
                    image_normal,
                    depth: pc.z,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::geometry::{look_rotation, SimilarityTransform};
    use crate::mesh::{occluding_edges, shapes};

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 200.0,
            fy: 200.0,
            cx: 80.0,
            cy: 60.0,
            width: 160,
            height: 120,
        }
    }

    fn camera_at(center: Vec3, forward: Vec3) -> Camera {
        let r_wc = look_rotation(&forward, &Vec3::y());
        let r = r_wc.transpose();
        Camera::new(intrinsics(), SimilarityTransform::rigid(r, -(r * center)))
    }

    #[test]
    fn single_triangle_depth() {
        let mesh = TriangleMesh::new(
            vec![Vec3::new(-1.0, -1.0, 10.0), Vec3::new(1.0, -1.0, 10.0), Vec3::new(0.0, 1.0, 10.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let cam = Camera::new(intrinsics(), SimilarityTransform::identity());
        let buf = render_depth(&mesh, &cam);
        assert!((buf.get(80, 60) - 10.0).abs() < 1e-12);
        assert_eq!(buf.get(0, 0), f64::INFINITY);
    }

    #[test]
    fn nearer_triangle_wins() {
        let tri = |z: f64| [Vec3::new(-5.0, -5.0, z), Vec3::new(5.0, -5.0, z), Vec3::new(0.0, 5.0, z)];
        let mut v = tri(10.0).to_vec();
        v.extend(tri(5.0));
        let mesh = TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let buf = render_depth(&mesh, &Camera::new(intrinsics(), SimilarityTransform::identity()));
        assert!((buf.get(80, 60) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_cavity_depth_bound() {
        let r = 10.0;
        let cav = shapes::icosphere_cavity(3, r);
        let cam = camera_at(Vec3::new(2.0, -1.0, 3.0), Vec3::new(0.3, 0.2, 1.0));
        let buf = render_depth(&cav, &cam);
        assert_eq!(buf.covered_pixels(), 160 * 120);
        assert!(buf.values().iter().all(|&d| d > 0.0 && d <= 2.0 * r));
    }

    #[test]
    fn convex_silhouette_fully_visible() {
        let sphere = shapes::icosphere(3, 5.0);
        let cam = camera_at(Vec3::new(0.0, 0.0, -40.0), Vec3::z());
        let edges = occluding_edges(&sphere, &cam.center()).unwrap();
        let buf = render_depth(&sphere, &cam);
        let all = visible_contours(&cam, &edges, &buf, f64::INFINITY);
        let kept = visible_contours(&cam, &edges, &buf, DEFAULT_VISIBILITY_TOLERANCE);
        assert!(!all.is_empty());
        assert_eq!(all.len(), kept.len());
        for s in &kept {
            assert!((s.image_normal.norm() - 1.0).abs() < 1e-12);
            assert!(s.model_normal.dot(&cam.forward()).abs() < 1e-12);
            // normals point away from the projected sphere center
            let c = Vec2::new(80.0, 60.0);
            assert!(s.image_normal.dot(&(s.pixel - c)) > 0.0);
        }
        // consecutive samples on one edge are at most a pixel apart
        for w in kept.windows(2) {
            if w[0].edge == w[1].edge {
                assert!((w[0].pixel - w[1].pixel).norm() <= 1.0 + 1e-9);
            }
        }
    }

    #[test]
    fn hidden_edge_removed() {
        // small sphere behind a large wall
        let sphere = shapes::icosphere(2, 1.0);
        let mut v: Vec<Vec3> = sphere.vertices().iter().map(|p| p + Vec3::new(0.0, 0.0, 20.0)).collect();
        let mut tris = sphere.triangles().to_vec();
        let base = v.len();
        v.extend([
            Vec3::new(-50.0, -50.0, 10.0),
            Vec3::new(50.0, -50.0, 10.0),
            Vec3::new(50.0, 50.0, 10.0),
            Vec3::new(-50.0, 50.0, 10.0),
        ]);
        tris.push([base, base + 2, base + 1]);
        tris.push([base, base + 3, base + 2]);
        let mesh = TriangleMesh::new(v, tris).unwrap();
        let cam = Camera::new(intrinsics(), SimilarityTransform::identity());
        let edges: Vec<_> = occluding_edges(&mesh, &cam.center())
            .unwrap()
            .into_iter()
            .filter(|e| e.endpoints[0].z > 15.0)
            .collect();
        assert!(!edges.is_empty());
        let buf = render_depth(&mesh, &cam);
        assert!(visible_contours(&cam, &edges, &buf, 1.0).is_empty());
    }

    #[test]
    fn pgm_header() {
        let buf = DepthBuffer::new(3, 2);
        let pgm = buf.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(pgm.len(), 11 + 6);
    }
}
