//! Correspondence phase: most likely 3D matches on the mesh and gated most
//! likely 2D matches among each frame's visible contour samples.

use rayon::prelude::*;

use crate::camera::{Camera, CameraFrame};
use crate::error::Result;
use crate::features::{ContourMetric, MatchError2, MatchError3, OrientedContourPoint};
use crate::geometry::{SimilarityTransform, Vec2, Vec3};
use crate::mesh::{occluding_edges, PreparedFeature, SpatialIndex, TriangleMesh};
use crate::render::{render_depth, visible_contours, ContourSample, DepthBuffer};

/// A mesh together with its spatial index.
#[derive(Clone, Debug)]
pub struct IndexedMesh {
    pub mesh: TriangleMesh,
    pub index: SpatialIndex,
}

impl IndexedMesh {
    pub const DEFAULT_LEAF_SIZE: usize = 8;

    pub fn new(mesh: TriangleMesh) -> Result<Self> {
        let index = SpatialIndex::build(&mesh, Self::DEFAULT_LEAF_SIZE)?;
        Ok(Self { mesh, index })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match3 {
    pub feature: usize,
    pub point: Vec3,
    pub face: usize,
    pub error: MatchError3,
    pub inlier: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match2 {
    /// Index into the frame's contour list.
    pub contour: usize,
    /// Index into the frame list.
    pub frame: usize,
    /// Index into the frame's visible sample set; `None` when the gate
    /// left no admissible candidate.
    pub candidate: Option<usize>,
    pub position: Vec2,
    pub normal: Vec2,
    pub model_point: Vec3,
    pub model_normal: Vec3,
    pub error: MatchError2,
    pub inlier: bool,
}

impl Match2 {
    /// Pixel distance between the contour point and its match.
    pub fn pixel_error(&self, x: &OrientedContourPoint) -> f64 {
        (self.position - x.position).norm()
    }
}

/// The visible contour set of one frame at the current pose.
#[derive(Clone, Debug)]
pub struct VisibleSet {
    pub camera: Camera,
    pub samples: Vec<ContourSample>,
}

/// Occluding edges, z-buffer and the depth-tested samples for one camera.
pub fn visible_set(mesh: &TriangleMesh, camera: &Camera, tolerance: f64) -> Result<(VisibleSet, DepthBuffer)> {
    let edges = occluding_edges(mesh, &camera.center())?;
    let depth = render_depth(mesh, camera);
    let samples = visible_contours(camera, &edges, &depth, tolerance);
    Ok((
        VisibleSet {
            camera: *camera,
            samples,
        },
        depth,
    ))
}

/// Visible sets of all frames under the cloud-to-model transform `t`.
pub fn visible_sets(
    mesh: &TriangleMesh,
    frames: &[CameraFrame],
    t: &SimilarityTransform,
    tolerance: f64,
) -> Result<Vec<VisibleSet>> {
    frames
        .par_iter()
        .map(|f| visible_set(mesh, &f.camera(t), tolerance).map(|(v, _)| v))
        .collect()
}

pub fn correspond_3d(features: &[PreparedFeature], mesh: &IndexedMesh, t: &SimilarityTransform) -> Vec<Match3> {
    features
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let m = mesh.index.most_likely_point_prepared(&mesh.mesh, x, t);
            Match3 {
                feature: i,
                point: m.point,
                face: m.face,
                error: m.error,
                inlier: true,
            }
        })
        .collect()
}

/// Uniform bucket grid over candidate pixel positions.
#[derive(Clone, Debug)]
pub struct ContourGrid {
    origin: Vec2,
    cell: f64,
    nx: i64,
    ny: i64,
    /// Candidate ids per cell, ascending.
    cells: Vec<Vec<u32>>,
}

impl ContourGrid {
    pub const DEFAULT_CELL: f64 = 8.0;

    pub fn new(samples: &[ContourSample], cell: f64) -> Self {
        let mut lo = Vec2::repeat(f64::INFINITY);
        let mut hi = Vec2::repeat(f64::NEG_INFINITY);
        for s in samples {
            lo = lo.inf(&s.pixel);
            hi = hi.sup(&s.pixel);
        }
        if samples.is_empty() {
            lo = Vec2::zeros();
            hi = Vec2::zeros();
        }
        let nx = (((hi.x - lo.x) / cell).floor() as i64 + 1).max(1);
        let ny = (((hi.y - lo.y) / cell).floor() as i64 + 1).max(1);
        let mut cells = vec![Vec::new(); (nx * ny) as usize];
        for (i, s) in samples.iter().enumerate() {
            let cx = (((s.pixel.x - lo.x) / cell).floor() as i64).clamp(0, nx - 1);
            let cy = (((s.pixel.y - lo.y) / cell).floor() as i64).clamp(0, ny - 1);
            cells[(cy * nx + cx) as usize].push(i as u32);
        }
        Self {
            origin: lo,
            cell,
            nx,
            ny,
            cells,
        }
    }

    /// Candidate minimizing the contour match error among those whose
    /// normal is within the gate (`ŷ·x̂ >= cos_gate`). Ties go to the lower index.
    pub fn best_match(
        &self,
        samples: &[ContourSample],
        x: &OrientedContourPoint,
        metric: &ContourMetric,
        cos_gate: f64,
    ) -> Option<(usize, MatchError2)> {
        if samples.is_empty() {
            return None;
        }
        let q = (x.position - self.origin) / self.cell;
        let (qx, qy) = (q.x.floor() as i64, q.y.floor() as i64);
        let dist_x = if qx < 0 { -qx } else { (qx - (self.nx - 1)).max(0) };
        let dist_y = if qy < 0 { -qy } else { (qy - (self.ny - 1)).max(0) };
        let r_start = dist_x.max(dist_y);
        let r_end = [qx, self.nx - 1 - qx, qy, self.ny - 1 - qy]
            .iter()
            .map(|d| d.abs())
            .max()
            .unwrap()
            .max(r_start);
        let mut best: Option<(usize, MatchError2)> = None;
        for r in r_start..=r_end {
            let bound = metric.positional_lower_bound(((r - 1).max(0)) as f64 * self.cell);
            if let Some((_, e)) = &best {
                if bound > e.value {
                    break;
                }
            }
            let y_lo = (qy - r).max(0);
            let y_hi = (qy + r).min(self.ny - 1);
            for cy in y_lo..=y_hi {
                let full_row = cy == qy - r || cy == qy + r;
                let mut visit = |cx: i64| {
                    if cx < 0 || cx >= self.nx {
                        return;
                    }
                    for &id in &self.cells[(cy * self.nx + cx) as usize] {
                        let s = &samples[id as usize];
                        if s.image_normal.dot(&x.normal) < cos_gate {
                            continue;
                        }
                        let e = metric.error(x, &s.pixel, &s.image_normal);
                        let better = match &best {
                            None => true,
                            Some((bi, be)) => e.value < be.value || (e.value == be.value && (id as usize) < *bi),
                        };
                        if better {
                            best = Some((id as usize, e));
                        }
                    }
                };
                if full_row {
                    for cx in (qx - r).max(0)..=(qx + r).min(self.nx - 1) {
                        visit(cx);
                    }
                } else {
                    visit(qx - r);
                    if r > 0 {
                        visit(qx + r);
                    }
                }
            }
        }
        best
    }
}

/// Matches every contour point of every frame against that frame's visible set.
pub fn correspond_2d(
    frames: &[CameraFrame],
    visible: &[VisibleSet],
    metric: &ContourMetric,
    orientation_gate: f64,
) -> Vec<Match2> {
    let cos_gate = orientation_gate.cos();
    let saturated = metric.kappa * (1.0 - cos_gate);
    let per_frame: Vec<Vec<Match2>> = frames
        .par_iter()
        .zip(visible.par_iter())
        .enumerate()
        .map(|(fi, (frame, vis))| {
            let grid = ContourGrid::new(&vis.samples, ContourGrid::DEFAULT_CELL);
            frame
                .contours
                .iter()
                .enumerate()
                .map(|(ci, x)| match grid.best_match(&vis.samples, x, metric, cos_gate) {
                    Some((id, error)) => {
                        let s = &vis.samples[id];
                        Match2 {
                            contour: ci,
                            frame: fi,
                            candidate: Some(id),
                            position: s.pixel,
                            normal: s.image_normal,
                            model_point: s.model_point,
                            model_normal: s.model_normal,
                            error,
                            inlier: true,
                        }
                    }
                    None => Match2 {
                        contour: ci,
                        frame: fi,
                        candidate: None,
                        position: x.position,
                        normal: x.normal,
                        model_point: Vec3::zeros(),
                        model_normal: Vec3::zeros(),
                        error: MatchError2 {
                            value: saturated,
                            positional_term: 0.0,
                            orientation_term: saturated,
                        },
                        inlier: false,
                    },
                })
                .collect()
        })
        .collect();
    per_frame.into_iter().flatten().collect()
}

/// Covariance scale `n3d·(1 − pₜ)/n2d` that gives the 3D and 2D feature
/// sets equal influence. 1 when either set is empty.
pub fn balance_factor(n3d: usize, n2d: usize, initial_trim: f64) -> f64 {
    if n3d == 0 || n2d == 0 {
        return 1.0;
    }
    n3d as f64 * (1.0 - initial_trim) / n2d as f64
}

/// Total match error over inliers; 3D terms use covariances scaled by `balance`.
pub fn total_error(matches3: &[Match3], matches2: &[Match2], balance: f64) -> f64 {
    let e3: f64 = matches3.iter().filter(|m| m.inlier).map(|m| m.error.value).sum();
    let e2: f64 = matches2.iter().filter(|m| m.inlier).map(|m| m.error.value).sum();
    e3 / balance + e2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::NoiseModel;

    fn sample(pixel: Vec2, normal: Vec2) -> ContourSample {
        ContourSample {
            edge: 0,
            model_point: Vec3::zeros(),
            model_normal: Vec3::zeros(),
            pixel,
            image_normal: normal.normalize(),
            depth: 1.0,
        }
    }

    #[test]
    fn gate_excludes_orthogonal_candidate() {
        let metric = NoiseModel::default().contour_metric().unwrap();
        let samples = vec![
            sample(Vec2::new(10.0, 10.0), Vec2::y()),
            sample(Vec2::new(10.0, 10.0), Vec2::x()),
        ];
        let grid = ContourGrid::new(&samples, 8.0);
        let x = OrientedContourPoint::new(Vec2::new(10.0, 10.0), Vec2::x(), 0).unwrap();
        let (id, e) = grid
            .best_match(&samples, &x, &metric, std::f64::consts::FRAC_PI_4.cos())
            .unwrap();
        assert_eq!(id, 1);
        assert_eq!(e.value, 0.0);
        let only_orthogonal = &samples[..1];
        let grid = ContourGrid::new(only_orthogonal, 8.0);
        assert!(grid
            .best_match(only_orthogonal, &x, &metric, std::f64::consts::FRAC_PI_4.cos())
            .is_none());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let metric = NoiseModel::default().contour_metric().unwrap();
        let samples = vec![
            sample(Vec2::new(100.0, 10.0), Vec2::x()),
            sample(Vec2::new(12.0, 10.0), Vec2::x()),
            sample(Vec2::new(8.0, 10.0), Vec2::x()),
        ];
        let grid = ContourGrid::new(&samples, 4.0);
        let x = OrientedContourPoint::new(Vec2::new(10.0, 10.0), Vec2::x(), 0).unwrap();
        assert_eq!(grid.best_match(&samples, &x, &metric, 0.0).unwrap().0, 1);
    }

    #[test]
    fn far_query_still_finds_match() {
        let metric = NoiseModel::default().contour_metric().unwrap();
        let samples = vec![sample(Vec2::new(5.0, 5.0), Vec2::x()), sample(Vec2::new(40.0, 9.0), Vec2::x())];
        let grid = ContourGrid::new(&samples, 8.0);
        let x = OrientedContourPoint::new(Vec2::new(-300.0, 700.0), Vec2::x(), 0).unwrap();
        assert_eq!(grid.best_match(&samples, &x, &metric, 0.0).unwrap().0, 0);
    }

    #[test]
    fn total_error_examples() {
        let m3 = Match3 {
            feature: 0,
            point: Vec3::zeros(),
            face: 0,
            error: MatchError3 {
                value: 0.5,
                residual: Vec3::x(),
            },
            inlier: true,
        };
        assert_eq!(total_error(&[m3], &[], balance_factor(1, 1, 0.0)), 0.5);
        let m2 = Match2 {
            contour: 0,
            frame: 0,
            candidate: Some(0),
            position: Vec2::zeros(),
            normal: Vec2::x(),
            model_point: Vec3::zeros(),
            model_normal: Vec3::x(),
            error: MatchError2 {
                value: 1.25,
                positional_term: 1.0,
                orientation_term: 0.25,
            },
            inlier: true,
        };
        assert_eq!(total_error(&[], &[m2, m2], 1.0), 2.5);
        let mut out = m2;
        out.inlier = false;
        assert_eq!(total_error(&[], &[m2, out], 1.0), 1.25);
        assert_eq!(total_error(&[], &[], 1.0), 0.0);
    }

    #[test]
    fn balance_scales_inversely_with_contours() {
        let a = balance_factor(900, 3000, 0.1);
        let b = balance_factor(900, 6000, 0.1);
        assert!((a - 0.27).abs() < 1e-15);
        assert_eq!(b * 2.0, a);
        assert_eq!(balance_factor(900, 0, 0.1), 1.0);
    }
}
