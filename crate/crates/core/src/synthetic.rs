//! Ground-truth registration problems on a simulated cavity, and the
//! scores used to judge a registration against them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, CameraFrame, CameraIntrinsics};
use crate::correspondence::{visible_set, IndexedMesh};
use crate::error::{Error, Result};
use crate::features::{Feature3D, NoiseModel, OrientedContourPoint};
use crate::geometry::{exp_so3, look_rotation, rotation_angle_between, Mat2, Mat3, SimilarityTransform, Vec2, Vec3};
use crate::mesh::shapes::{pseudo_sinus, CavitySpec};
use crate::mesh::TriangleMesh;
use crate::registration::{register, Problem, SolverConfig};
use crate::render::{render_depth, DepthBuffer};
use crate::serde_util::mat2_rows;
use crate::stats::sample_von_mises;

/// Where one virtual camera sits and looks, in model coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPlacement {
    pub center: [f64; 3],
    pub forward: [f64; 3],
    /// Preferred image-down direction.
    pub down: [f64; 3],
}

impl CameraPlacement {
    /// Rigid camera-from-model transform.
    pub fn extrinsic(&self) -> SimilarityTransform {
        let r = look_rotation(&Vec3::from(self.forward), &Vec3::from(self.down)).transpose();
        SimilarityTransform::rigid(r, -(r * Vec3::from(self.center)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    /// Built-in cavity; ignored when the caller supplies its own mesh.
    pub cavity: CavitySpec,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: Vec<CameraPlacement>,
    pub points: usize,
    /// 3D noise std along each generating camera's optical axis, mm.
    pub noise_std_parallel: f64,
    /// 3D noise std across the optical axis, mm.
    pub noise_std_orthogonal: f64,
    /// Camera poses are offset by up to this much, mm.
    pub camera_translation_noise: f64,
    /// Camera poses are rotated by up to this much, degrees.
    pub camera_rotation_noise_deg: f64,
    /// Misalignment translation magnitude range, mm.
    pub misalignment_translation: [f64; 2],
    /// Misalignment rotation angle range, degrees.
    pub misalignment_rotation_deg: [f64; 2],
    /// Scale applied to the data side; `[1, 1]` keeps metric units.
    pub misalignment_scale: [f64; 2],
    /// Contour position noise covariance, pixels².
    #[serde(with = "mat2_rows")]
    pub contour_sigma2d: Mat2,
    /// Contour orientation noise concentration; zero disables it.
    pub contour_kappa: f64,
    /// Keep every n-th visible contour sample as an observation.
    pub contour_stride: usize,
    /// Fraction of 3D features displaced into gross outliers.
    pub outlier_fraction: f64,
    /// Gross outlier offset behind the surface along its outward normal, mm.
    pub outlier_magnitude: f64,
    /// Depth slack when testing sampled points for visibility, mm.
    pub visibility_tolerance: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        let n = 6;
        let trajectory = (0..n)
            .map(|i| {
                let x = -18.0 + 8.0 * i as f64 / (n - 1) as f64;
                let tilt = 0.15 * (i as f64 * 1.3).sin();
                CameraPlacement {
                    center: [x, 0.0, 0.0],
                    forward: [1.0, tilt, 0.5 * tilt],
                    down: [0.0, 0.0, 1.0],
                }
            })
            .collect();
        Self {
            cavity: CavitySpec::default(),
            intrinsics: CameraIntrinsics {
                fx: 400.0,
                fy: 400.0,
                cx: 319.5,
                cy: 239.5,
                width: 640,
                height: 480,
            },
            trajectory,
            points: 900,
            noise_std_parallel: 0.5,
            noise_std_orthogonal: 0.3,
            camera_translation_noise: 0.25,
            camera_rotation_noise_deg: 0.25,
            misalignment_translation: [2.0, 3.0],
            misalignment_rotation_deg: [2.0, 3.0],
            misalignment_scale: [1.0, 1.0],
            contour_sigma2d: Mat2::identity() * 9.0,
            contour_kappa: 200.0,
            contour_stride: 3,
            outlier_fraction: 0.0,
            outlier_magnitude: 10.0,
            visibility_tolerance: 0.1,
            seed: 1,
        }
    }
}

impl SceneSpec {
    /// Zero noise everywhere and no misalignment.
    pub fn noiseless(mut self) -> Self {
        self.noise_std_parallel = 0.0;
        self.noise_std_orthogonal = 0.0;
        self.camera_translation_noise = 0.0;
        self.camera_rotation_noise_deg = 0.0;
        self.misalignment_translation = [0.0, 0.0];
        self.misalignment_rotation_deg = [0.0, 0.0];
        self.misalignment_scale = [1.0, 1.0];
        self.contour_sigma2d = Mat2::zeros();
        self.contour_kappa = 0.0;
        self.outlier_fraction = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.trajectory.is_empty() {
            return Err(Error::EmptyInput("scene trajectory has no cameras"));
        }
        let nonneg = [
            ("noise_std_parallel", self.noise_std_parallel),
            ("noise_std_orthogonal", self.noise_std_orthogonal),
            ("camera_translation_noise", self.camera_translation_noise),
            ("camera_rotation_noise_deg", self.camera_rotation_noise_deg),
            ("contour_kappa", self.contour_kappa),
            ("outlier_magnitude", self.outlier_magnitude),
            ("visibility_tolerance", self.visibility_tolerance),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be a nonnegative number")));
            }
        }
        for (name, [lo, hi]) in [
            ("misalignment_translation", self.misalignment_translation),
            ("misalignment_rotation_deg", self.misalignment_rotation_deg),
        ] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Domain(format!("{name} must be an ordered nonnegative range")));
            }
        }
        let [slo, shi] = self.misalignment_scale;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::Domain("misalignment_scale must be an ordered positive range".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Domain("outlier_fraction must lie in [0,1)".into()));
        }
        if self.contour_stride == 0 {
            return Err(Error::Domain("contour_stride must be positive".into()));
        }
        let s = &self.contour_sigma2d;
        if (s[(0, 1)] - s[(1, 0)]).abs() > 1e-12 || s.symmetric_eigenvalues().min() < 0.0 {
            return Err(Error::InvalidCovariance("contour_sigma2d must be symmetric positive semidefinite".into()));
        }
        for (i, p) in self.trajectory.iter().enumerate() {
            let ok = p.center.iter().chain(&p.forward).chain(&p.down).all(|v| v.is_finite())
                && Vec3::from(p.forward).norm() > 1e-9;
            if !ok {
                return Err(Error::Domain(format!("trajectory pose {i} is not finite or has no direction")));
            }
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> TriangleMesh {
        pseudo_sinus(&self.cavity)
    }

    /// Index of the camera whose visible triangles become TRE targets.
    pub fn middle_frame(&self) -> usize {
        self.trajectory.len() / 2
    }
}

/// What the generator knows and the registration must recover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Model-to-cloud transform applied to the data assembly.
    pub misalignment: SimilarityTransform,
    /// Cloud-to-model transform that undoes it.
    pub transform: SimilarityTransform,
    /// Noise-free camera-from-model poses.
    pub camera_poses: Vec<SimilarityTransform>,
    pub targets: Vec<[f64; 3]>,
    /// Noise-free model points behind each feature.
    pub feature_sources: Vec<[f64; 3]>,
    /// Camera each feature was sampled from.
    pub generating_frames: Vec<usize>,
    /// Features displaced into gross outliers, ascending.
    pub outliers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub features: Vec<Feature3D>,
    pub frames: Vec<CameraFrame>,
    pub ground_truth: GroundTruth,
}

fn uniform_in<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn standard_normal3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    )
}

/// Visible from `camera` at `p`: in the image and within `tol` of the z-buffer.
fn sees(camera: &Camera, depth: &DepthBuffer, p: &Vec3, tol: f64) -> bool {
    match camera.project_point(p) {
        Ok((px, z)) => camera.intrinsics.contains(&px) && z <= depth.at(&px) + tol,
        Err(_) => false,
    }
}

/// Area-weighted random surface sampler.
struct SurfaceSampler {
    cumulative: Vec<f64>,
}

impl SurfaceSampler {
    fn new(mesh: &TriangleMesh) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..mesh.face_count())
            .map(|f| {
                acc += mesh.face_area(f);
                acc
            })
            .collect();
        Self { cumulative }
    }

    fn sample<R: Rng>(&self, mesh: &TriangleMesh, rng: &mut R) -> (usize, Vec3) {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let u = rng.random_range(0.0..total);
        let f = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        let (mut a, mut b): (f64, f64) = (rng.random(), rng.random());
        if a + b > 1.0 {
            a = 1.0 - a;
            b = 1.0 - b;
        }
        let [p0, p1, p2] = mesh.face_vertices(f);
        (f, p0 + (p1 - p0) * a + (p2 - p0) * b)
    }
}

/// Builds a scene on `mesh` (model coordinates, normals into the cavity).
///
/// Steps: sample `points` surface points round-robin over the cameras,
/// keeping those visible at the true pose; add anisotropic noise aligned
/// with the generating camera; perturb the camera poses; render the true
/// visible contours per frame and add position and orientation noise;
/// finally move the whole data assembly by a random misalignment.
pub fn generate_scene(spec: &SceneSpec, mesh: &IndexedMesh) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_frames = spec.trajectory.len();
    let cameras: Vec<Camera> = spec
        .trajectory
        .iter()
        .map(|p| Camera::new(spec.intrinsics, p.extrinsic()))
        .collect();
    if let Some(i) = cameras.iter().position(|c| {
        !crate::mesh::interior_signed_check(&mesh.mesh, &mesh.index, &c.center()).is_interior()
    }) {
        return Err(Error::Domain(format!("trajectory camera {i} lies outside the cavity")));
    }
    let depths: Vec<DepthBuffer> = cameras.par_iter().map(|c| render_depth(&mesh.mesh, c)).collect();

    // 3D points
    let sampler = SurfaceSampler::new(&mesh.mesh);
    let mut sources = Vec::with_capacity(spec.points);
    let mut generating = Vec::with_capacity(spec.points);
    let mut source_faces = Vec::with_capacity(spec.points);
    let max_attempts = 200 * spec.points.max(1);
    let mut attempts = 0;
    while sources.len() < spec.points && attempts < max_attempts {
        attempts += 1;
        let j = sources.len() % n_frames;
        let (f, p) = sampler.sample(&mesh.mesh, &mut rng);
        if sees(&cameras[j], &depths[j], &p, spec.visibility_tolerance) {
            sources.push(p);
            generating.push(j);
            source_faces.push(f);
        }
    }
    if sources.len() < spec.points {
        return Err(Error::CountShortfall {
            requested: spec.points,
            achieved: sources.len(),
        });
    }
    let has_noise = spec.noise_std_parallel > 0.0 && spec.noise_std_orthogonal > 0.0;
    let std_cam = Vec3::new(spec.noise_std_orthogonal, spec.noise_std_orthogonal, spec.noise_std_parallel);
    let mut noisy: Vec<(Vec3, Mat3)> = sources
        .iter()
        .zip(&generating)
        .map(|(p, &j)| {
            let r = cameras[j].extrinsic.rotation;
            let z = standard_normal3(&mut rng);
            let offset = r.transpose() * z.component_mul(&std_cam);
            let cov = if has_noise {
                r.transpose() * Mat3::from_diagonal(&std_cam.component_mul(&std_cam)) * r
            } else {
                NoiseModel::default().sigma3d_default
            };
            (p + offset, cov)
        })
        .collect();
    // outliers sit `outlier_magnitude` behind the wall along the outward
    // normal, skipping points that would land within half that distance of
    // another part of the surface; they draw from their own stream so the
    // rest of the scene matches the outlier-free scene of the same seed
    let n_out = (spec.outlier_fraction * spec.points as f64).round() as usize;
    let mut outliers = Vec::with_capacity(n_out);
    if n_out > 0 {
        let mut outlier_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        outlier_rng.set_stream(1);
        let order = rand::seq::index::sample(&mut outlier_rng, spec.points, spec.points);
        for i in order {
            if outliers.len() == n_out {
                break;
            }
            let moved = noisy[i].0 - mesh.mesh.face_normal(source_faces[i]) * spec.outlier_magnitude;
            if mesh.index.closest_point(&mesh.mesh, &moved).distance >= 0.5 * spec.outlier_magnitude {
                noisy[i].0 = moved;
                outliers.push(i);
            }
        }
        if outliers.len() < n_out {
            return Err(Error::CountShortfall {
                requested: n_out,
                achieved: outliers.len(),
            });
        }
        outliers.sort_unstable();
    }

    // camera pose noise: center offset and rotation about the center
    let noisy_poses: Vec<SimilarityTransform> = cameras
        .iter()
        .map(|c| {
            let dc = random_unit(&mut rng) * rng.random_range(0.0..=spec.camera_translation_noise);
            let angle = rng.random_range(0.0..=spec.camera_rotation_noise_deg).to_radians();
            let w = random_unit(&mut rng) * angle;
            let r_wc = exp_so3(&w) * c.extrinsic.rotation.transpose();
            let r = r_wc.transpose();
            SimilarityTransform::rigid(r, -(r * (c.center() + dc)))
        })
        .collect();

    // contours from the true poses
    let sqrt_sigma2d = {
        let e = spec.contour_sigma2d.symmetric_eigen();
        e.eigenvectors * Mat2::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt())) * e.eigenvectors.transpose()
    };
    let samples: Vec<_> = cameras
        .par_iter()
        .map(|c| visible_set(&mesh.mesh, c, crate::render::DEFAULT_VISIBILITY_TOLERANCE).map(|(v, _)| v.samples))
        .collect::<Result<_>>()?;
    let mut contours: Vec<Vec<OrientedContourPoint>> = Vec::with_capacity(n_frames);
    for (j, s) in samples.iter().enumerate() {
        let mut pts = Vec::new();
        for sample in s.iter().step_by(spec.contour_stride) {
            let z = Vec2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            let pos = sample.pixel + sqrt_sigma2d * z;
            let angle = if spec.contour_kappa > 0.0 {
                sample_von_mises(&mut rng, spec.contour_kappa)
            } else {
                0.0
            };
            let (sn, cs) = angle.sin_cos();
            let n = sample.image_normal;
            let normal = Vec2::new(cs * n.x - sn * n.y, sn * n.x + cs * n.y);
            if spec.intrinsics.contains(&pos) {
                pts.push(OrientedContourPoint::new(pos, normal, j)?);
            }
        }
        contours.push(pts);
    }

    // misalignment of the data assembly
    let angle = uniform_in(&mut rng, spec.misalignment_rotation_deg).to_radians();
    let axis = random_unit(&mut rng);
    let shift = random_unit(&mut rng) * uniform_in(&mut rng, spec.misalignment_translation);
    let scale = uniform_in(&mut rng, spec.misalignment_scale);
    // rotate about the trajectory centroid so the cameras stay near the
    // axis of the cavity
    let pivot = cameras.iter().map(|c| c.center()).sum::<Vec3>() / n_frames as f64;
    let rotation = exp_so3(&(axis * angle));
    let misalignment = SimilarityTransform {
        scale,
        rotation,
        translation: pivot - scale * (rotation * pivot) + shift,
    };
    let truth = misalignment.inverse();
    let features = noisy
        .into_iter()
        .map(|(p, cov)| {
            let r = misalignment.rotation;
            let s2 = misalignment.scale * misalignment.scale;
            let c = r * cov * r.transpose() * s2;
            // exactly symmetric, so the upper triangle written to disk is the whole matrix
            Feature3D::new(misalignment.apply(&p), (c + c.transpose()) * 0.5)
        })
        .collect::<Result<Vec<_>>>()?;
    // camera-from-cloud: rotation R_E·Rᵀ, translation s·t_E − R_E·Rᵀ·t
    let frames = noisy_poses
        .iter()
        .zip(contours)
        .enumerate()
        .map(|(j, (pose, contours))| {
            let r = pose.rotation * misalignment.rotation.transpose();
            CameraFrame {
                id: j,
                intrinsics: spec.intrinsics,
                cloud_pose: SimilarityTransform::rigid(
                    r,
                    misalignment.scale * pose.translation - r * misalignment.translation,
                ),
                contours,
            }
        })
        .collect();

    let mid = spec.middle_frame();
    let targets: Vec<[f64; 3]> = (0..mesh.mesh.face_count())
        .filter_map(|f| {
            let c = mesh.mesh.face_center(f);
            let facing = mesh.mesh.face_normal(f).dot(&(cameras[mid].center() - c)) > 0.0;
            (facing && sees(&cameras[mid], &depths[mid], &c, spec.visibility_tolerance)).then(|| c.into())
        })
        .collect();
    if targets.is_empty() {
        return Err(Error::EmptyInput("no triangle is visible to the middle camera"));
    }

    Ok(Scene {
        features,
        frames,
        ground_truth: GroundTruth {
            misalignment,
            transform: truth,
            camera_poses: cameras.iter().map(|c| c.extrinsic).collect(),
            targets,
            feature_sources: sources.iter().map(|p| (*p).into()).collect(),
            generating_frames: generating,
            outliers,
        },
    })
}

/// Mean distance between each target and its image after the data-side
/// misalignment followed by `t`. Zero when `t` undoes the misalignment.
pub fn evaluate_tre(t: &SimilarityTransform, truth: &GroundTruth) -> f64 {
    let sum: f64 = truth
        .targets
        .iter()
        .map(|y| {
            let y = Vec3::from(*y);
            (t.apply(&truth.misalignment.apply(&y)) - y).norm()
        })
        .sum();
    sum / truth.targets.len() as f64
}

/// Mean camera center distance (mm) and rotation angle (degrees) between
/// the frames placed by `t` and the noise-free true poses.
pub fn evaluate_pose_error(t: &SimilarityTransform, frames: &[CameraFrame], truth: &GroundTruth) -> (f64, f64) {
    let n = frames.len().min(truth.camera_poses.len());
    if n == 0 {
        return (0.0, 0.0);
    }
    let (mut pos, mut ang) = (0.0, 0.0);
    for (f, true_pose) in frames.iter().zip(&truth.camera_poses) {
        let est = f.extrinsic(t);
        let c_est = -(est.rotation.transpose() * est.translation);
        let c_true = -(true_pose.rotation.transpose() * true_pose.translation);
        pos += (c_est - c_true).norm();
        ang += rotation_angle_between(&est.rotation, &true_pose.rotation).to_degrees();
    }
    (pos / n as f64, ang / n as f64)
}

/// Mean pixel distance between the targets projected by the middle camera
/// as placed by `t` and as placed by the true transform.
pub fn reprojection_error(t: &SimilarityTransform, frames: &[CameraFrame], truth: &GroundTruth, frame: usize) -> f64 {
    let est = frames[frame].camera(t);
    let reference = frames[frame].camera(&truth.transform);
    let (mut sum, mut n) = (0.0, 0usize);
    for y in &truth.targets {
        let y = Vec3::from(*y);
        if let (Ok((a, _)), Ok((b, _))) = (est.project_point(&y), reference.project_point(&y)) {
            sum += (a - b).norm();
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub offset_mm: f64,
    pub offset_deg: f64,
    pub reprojection_px: f64,
    pub contour_err_px: Option<f64>,
    pub tre_mm: f64,
    pub converged: bool,
    /// Every recorded iteration kept all camera centers inside the mesh.
    pub cameras_interior: bool,
    /// Set when the run aborted; the other fields then describe its last state.
    pub failure: Option<String>,
}

/// Registers the scene from initial poses offset from identity by each
/// `(mm, degrees)` pair: a slide along the mean viewing direction of the
/// cameras and a roll about that direction through their mean center, the
/// motions that keep an endoscope inside the passage. One row per offset,
/// in order. `seed` picks the roll sense and the slide sense is forward.
pub fn perturbation_sweep(
    scene: &Scene,
    mesh: &IndexedMesh,
    noise: &NoiseModel,
    config: &SolverConfig,
    offsets: &[(f64, f64)],
    frame: usize,
    seed: u64,
) -> Vec<SweepRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let roll_sense = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let n = scene.frames.len().max(1) as f64;
    let pivot = scene.frames.iter().map(|f| f.center_in_cloud()).sum::<Vec3>() / n;
    let forward = scene
        .frames
        .iter()
        .map(|f| f.cloud_pose.rotation.transpose() * Vec3::z())
        .sum::<Vec3>()
        .try_normalize(1e-12)
        .unwrap_or_else(Vec3::x);
    let problem = Problem {
        features: &scene.features,
        frames: &scene.frames,
        mesh,
        noise,
        config,
    };
    offsets
        .par_iter()
        .map(|&(mm, deg)| {
            let r = exp_so3(&(forward * (roll_sense * deg.to_radians())));
            let init = SimilarityTransform::rigid(r, pivot - r * pivot + forward * mm);
            let (t, contour, converged, failure, history) = match register(&problem, &init) {
                Ok(res) => (res.transform, res.mean_contour_error_inliers, res.converged, None, res.state.history),
                Err(f) => (f.state.transform, None, false, Some(f.error.to_string()), f.state.history),
            };
            SweepRow {
                offset_mm: mm,
                offset_deg: deg,
                reprojection_px: reprojection_error(&t, &scene.frames, &scene.ground_truth, frame),
                contour_err_px: contour,
                tre_mm: evaluate_tre(&t, &scene.ground_truth),
                converged,
                cameras_interior: history.iter().all(|h| h.cameras_interior),
                failure,
            }
        })
        .collect()
}

/// Ranks with ties sharing their mean rank, 1-based.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` if either side is constant or the
/// lengths differ.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| sab / (saa * sbb).sqrt())
}
