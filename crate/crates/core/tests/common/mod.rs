//! Reference implementations shared by the integration tests. Each one is
//! written from first principles and shares no code with the library paths
//! it checks.
#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vimlop::geometry::{exp_so3, Mat3, SimilarityTransform, Vec3};
use vimlop::mesh::TriangleMesh;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation<R: Rng>(rng: &mut R, max_angle: f64) -> Mat3 {
    exp_so3(&(unit(rng) * rng.random_range(0.0..max_angle)))
}

/// SPD matrix with eigenvalues in `[lo, hi]` and random axes.
pub fn random_spd<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Mat3 {
    let q = random_rotation(rng, std::f64::consts::PI);
    let d = Mat3::from_diagonal(&Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)));
    let m = q * d * q.transpose();
    (m + m.transpose()) * 0.5
}

/// Closest point on segment `ab`.
fn on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    a + d * t
}

/// Closest point on triangle `abc`: the plane projection when it falls
/// inside (barycentric test by solving the 2×2 normal equations), else the
/// best of the three edge projections.
pub fn closest_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let (e0, e1) = (b - a, c - a);
    let g = nalgebra::Matrix2::new(e0.dot(&e0), e0.dot(&e1), e1.dot(&e0), e1.dot(&e1));
    let rhs = nalgebra::Vector2::new((p - a).dot(&e0), (p - a).dot(&e1));
    if let Some(inv) = g.try_inverse() {
        let uv = inv * rhs;
        if uv.x >= 0.0 && uv.y >= 0.0 && uv.x + uv.y <= 1.0 {
            return a + e0 * uv.x + e1 * uv.y;
        }
    }
    [on_segment(p, a, b), on_segment(p, b, c), on_segment(p, c, a)]
        .into_iter()
        .min_by(|x, y| (x - p).norm_squared().total_cmp(&(y - p).norm_squared()))
        .unwrap()
}

/// Exhaustive closest point: (face, point, distance).
pub fn brute_closest(mesh: &TriangleMesh, q: &Vec3) -> (usize, Vec3, f64) {
    let mut best = (usize::MAX, Vec3::zeros(), f64::INFINITY);
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_vertices(f);
        let y = closest_on_triangle(q, &a, &b, &c);
        let d = (y - q).norm();
        if d < best.2 {
            best = (f, y, d);
        }
    }
    best
}

/// Value of `½ rᵀ(RΣRᵀ)⁻¹r` with `r = y − z`.
pub fn mahalanobis_half(cov: &Mat3, rotation: &Mat3, y: &Vec3, z: &Vec3) -> f64 {
    let m = rotation * cov * rotation.transpose();
    let r = y - z;
    0.5 * r.dot(&(m.try_inverse().unwrap() * r))
}

/// Exhaustive most likely point: each triangle is mapped by the whitening
/// map `W` with `WᵀW = (RΣRᵀ)⁻¹`, where the problem becomes Euclidean.
/// Returns (face, model point, error value).
pub fn brute_most_likely(mesh: &TriangleMesh, position: &Vec3, cov: &Mat3, t: &SimilarityTransform) -> (usize, Vec3, f64) {
    let m: Matrix3<f64> = t.rotation * cov * t.rotation.transpose();
    let l = m.cholesky().unwrap().l();
    let w = l.try_inverse().unwrap();
    let w_inv = l;
    let z = t.apply(position);
    let wz = w * z;
    let mut best = (usize::MAX, Vec3::zeros(), f64::INFINITY);
    for f in 0..mesh.face_count() {
        let [a, b, c] = mesh.face_vertices(f).map(|v| w * v);
        let hit = closest_on_triangle(&wz, &a, &b, &c);
        let value = 0.5 * (hit - wz).norm_squared();
        if value < best.2 {
            best = (f, w_inv * hit, value);
        }
    }
    best
}

/// Closed-form similarity fit `y ≈ s·R·x + t` (least squares, SVD of the
/// cross-covariance with the reflection fix).
pub fn umeyama(x: &[Vec3], y: &[Vec3]) -> (f64, Mat3, Vec3) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vec3>() / n;
    let my = y.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (b - my) * (a - mx).transpose();
        var_x += (a - mx).norm_squared();
    }
    cov /= n;
    var_x /= n;
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u * v_t).determinant() < 0.0 {
        d.z = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * v_t;
    let s = svd.singular_values.component_mul(&d).sum() / var_x;
    let t = my - r * mx * s;
    (s, r, t)
}

/// Möller–Trumbore hit distance along `dir` from `o`, if any.
pub fn ray_triangle(o: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    let (e1, e2) = (b - a, c - a);
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 0.0).then_some(t)
}

/// Number of faces crossed by the ray from `o` along `dir`.
pub fn ray_crossings(mesh: &TriangleMesh, o: &Vec3, dir: &Vec3) -> usize {
    (0..mesh.face_count())
        .filter(|&f| {
            let [a, b, c] = mesh.face_vertices(f);
            ray_triangle(o, dir, &a, &b, &c).is_some()
        })
        .count()
}

/// Whether the segment from `eye` to `p` is free of surface hits before
/// `p − slack` along the ray.
pub fn unoccluded(mesh: &TriangleMesh, eye: &Vec3, p: &Vec3, slack: f64) -> bool {
    let d = p - eye;
    let len = d.norm();
    let dir = d / len;
    (0..mesh.face_count()).all(|f| {
        let [a, b, c] = mesh.face_vertices(f);
        match ray_triangle(eye, &dir, &a, &b, &c) {
            Some(t) => t >= len - slack,
            None => true,
        }
    })
}

use vimlop::correspondence::{ContourGrid, IndexedMesh};
use vimlop::features::{ContourMetric, Feature3D, NoiseModel, OrientedContourPoint};
use vimlop::geometry::{Mat2, Vec2};
use vimlop::registration::{
    solve_transform, ContourTerm, FramePose, InnerSolverConfig, Jac3, Objective, PointTerm,
};
use vimlop::camera::CameraIntrinsics;
use vimlop::render::ContourSample;

pub fn random_transform<R: Rng>(rng: &mut R) -> SimilarityTransform {
    SimilarityTransform::new(
        rng.random_range(0.5..2.0),
        random_rotation(rng, std::f64::consts::PI),
        unit(rng) * rng.random_range(0.0..10.0),
    )
    .unwrap()
}

/// Central differences of `f` over the parameters `[ω, τ, log s]`.
pub fn numeric_jacobian(t: &SimilarityTransform, f: impl Fn(&SimilarityTransform) -> Vec3) -> Jac3 {
    let h = 1e-6;
    let mut j = Jac3::zeros();
    for k in 0..7 {
        let mut d = [0.0; 7];
        d[k] = h;
        let shift = |sign: f64| {
            let w = Vec3::new(d[0], d[1], d[2]) * sign;
            let tau = Vec3::new(d[3], d[4], d[5]) * sign;
            t.perturbed(d[6] * sign, &w, &tau)
        };
        j.set_column(k, &((f(&shift(1.0)) - f(&shift(-1.0))) / (2.0 * h)));
    }
    j
}

pub fn relative_error(analytic: &Jac3, numeric: &Jac3) -> f64 {
    (analytic - numeric).norm() / analytic.norm().max(1e-12)
}

/// Worst relative Jacobian error of the 3D term over `n` random states.
pub fn jacobian_3d_worst(n: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let t = random_transform(&mut rng);
            let cov = random_spd(&mut rng, 0.05, 2.0);
            let l_inv = cov.cholesky().unwrap().l().try_inverse().unwrap();
            let term = PointTerm {
                x: unit(&mut rng) * rng.random_range(0.0..20.0),
                y: unit(&mut rng) * rng.random_range(0.0..20.0),
                w: l_inv * rng.random_range(0.2..2.0),
            };
            relative_error(&term.jacobian(&t), &numeric_jacobian(&t, |s| term.residual(s)))
        })
        .fold(0.0, f64::max)
}

pub fn random_intrinsics<R: Rng>(rng: &mut R) -> CameraIntrinsics {
    CameraIntrinsics {
        fx: rng.random_range(200.0..600.0),
        fy: rng.random_range(200.0..600.0),
        cx: rng.random_range(250.0..350.0),
        cy: rng.random_range(200.0..280.0),
        width: 640,
        height: 480,
    }
}

/// A random contour term whose model point sits in front of the camera and
/// whose observed normal is within 80° of the projected model normal.
pub fn random_contour_case<R: Rng>(rng: &mut R) -> (ContourTerm, FramePose, ContourMetric, SimilarityTransform) {
    let t = random_transform(rng);
    let pose = FramePose {
        intrinsics: random_intrinsics(rng),
        rotation: random_rotation(rng, std::f64::consts::PI),
        translation: unit(rng) * rng.random_range(0.0..5.0),
    };
    let p_cam = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(5.0..40.0));
    // p_cam = R_j·Rᵀ·(y − t) + s·t_j
    let y = t.translation + t.rotation * pose.rotation.transpose() * (p_cam - t.scale * pose.translation);
    let n_cam = loop {
        let n = unit(rng);
        if n.x.hypot(n.y) > 0.3 {
            break n;
        }
    };
    let model_normal = t.rotation * pose.rotation.transpose() * n_cam;
    let k = &pose.intrinsics;
    let v = Vec2::new(k.fx * n_cam.x, k.fy * n_cam.y).normalize();
    let turn = rng.random_range(-1.4..1.4);
    let (s, c) = f64::sin_cos(turn);
    let observed_normal = Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y);
    let noise = NoiseModel {
        sigma2d: {
            let a: f64 = rng.random_range(2.0..16.0);
            let b: f64 = rng.random_range(2.0..16.0);
            let off = rng.random_range(-0.5..0.5) * (a * b).sqrt();
            Mat2::new(a, off, off, b)
        },
        kappa: rng.random_range(10.0..400.0),
        ..NoiseModel::default()
    };
    let term = ContourTerm {
        frame: 0,
        observed: Vec2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)),
        observed_normal,
        model_point: y,
        model_normal,
    };
    (term, pose, noise.contour_metric().unwrap(), t)
}

/// Worst relative Jacobian error of the contour term over `n` random states.
pub fn jacobian_2d_worst(n: usize, seed: u64) -> f64 {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| {
            let (term, pose, metric, t) = random_contour_case(&mut rng);
            let analytic = term.jacobian(&pose, &metric, &t).unwrap();
            let numeric = numeric_jacobian(&t, |s| term.residual(&pose, &metric, s).unwrap());
            relative_error(&analytic, &numeric)
        })
        .fold(0.0, f64::max)
}

/// Index-accelerated most likely points against the exhaustive whitened
/// search. Returns one message per disagreement.
pub fn mlp_mismatches(mesh: &IndexedMesh, queries: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let (lo, hi) = mesh.mesh.bounds();
    let mut out = Vec::new();
    for q in 0..queries {
        let t = SimilarityTransform::new(
            rng.random_range(0.8..1.25),
            random_rotation(&mut rng, 0.3),
            unit(&mut rng) * rng.random_range(0.0..2.0),
        )
        .unwrap();
        let target = Vec3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        );
        let position = t.inverse().apply(&target);
        let cov = if q % 4 == 0 {
            Mat3::identity() * rng.random_range(0.1..2.0)
        } else {
            random_spd(&mut rng, 0.02, 3.0)
        };
        let feature = Feature3D::new(position, cov).unwrap();
        let got = mesh.index.most_likely_point(&mesh.mesh, &feature, &t).unwrap();
        let (face, _, value) = brute_most_likely(&mesh.mesh, &position, &cov, &t);
        let tol = 1e-7 * value.max(1.0);
        let got_value = mahalanobis_half(&cov, &t.rotation, &got.point, &t.apply(&position));
        if (got.error.value - value).abs() > tol || (got_value - value).abs() > tol {
            out.push(format!("query {q}: value {} vs {value}", got.error.value));
        } else if got.face != face {
            // a tie: the chosen face must reach the same optimum
            let [a, b, c] = mesh.mesh.face_vertices(got.face);
            let l = (t.rotation * cov * t.rotation.transpose()).cholesky().unwrap().l();
            let w = l.try_inverse().unwrap();
            let wz = w * t.apply(&position);
            let alt = 0.5 * (closest_on_triangle(&wz, &(w * a), &(w * b), &(w * c)) - wz).norm_squared();
            if (alt - value).abs() > tol {
                out.push(format!("query {q}: face {} vs {face}", got.face));
            }
        }
    }
    out
}

/// Exhaustive gated contour match: lowest error, ties to the lower index.
pub fn brute_contour_match(
    samples: &[ContourSample],
    x: &OrientedContourPoint,
    sigma2d: &Mat2,
    kappa: f64,
    gate: f64,
) -> Option<(usize, f64)> {
    let inv = sigma2d.try_inverse().unwrap();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in samples.iter().enumerate() {
        let cos = s.image_normal.dot(&x.normal);
        if cos < gate.cos() {
            continue;
        }
        let d = s.pixel - x.position;
        let value = 0.5 * d.dot(&(inv * d)) + kappa * (1.0 - cos);
        if best.is_none_or(|(_, b)| value < b) {
            best = Some((i, value));
        }
    }
    best
}

/// Grid-accelerated gated contour matching against the exhaustive scan.
pub fn contour_match_mismatches(queries: usize, seed: u64) -> Vec<String> {
    let mut rng = rng(seed);
    let noise = NoiseModel::default();
    let metric = noise.contour_metric().unwrap();
    let gate = noise.orientation_gate;
    let mut out = Vec::new();
    let mut q = 0;
    while q < queries {
        let n = rng.random_range(1..=200);
        let samples: Vec<ContourSample> = (0..n)
            .map(|i| {
                let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                ContourSample {
                    edge: i,
                    model_point: Vec3::zeros(),
                    model_normal: Vec3::zeros(),
                    // snapped pixels create exact distance ties now and then
                    pixel: Vec2::new(rng.random_range(0..160) as f64 * 4.0, rng.random_range(0..120) as f64 * 4.0),
                    image_normal: Vec2::new(a.cos(), a.sin()),
                    depth: 1.0,
                }
            })
            .collect();
        let grid = ContourGrid::new(&samples, ContourGrid::DEFAULT_CELL);
        for _ in 0..50 {
            let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let x = OrientedContourPoint::new(
                Vec2::new(rng.random_range(-50.0..690.0), rng.random_range(-50.0..530.0)),
                Vec2::new(a.cos(), a.sin()),
                0,
            )
            .unwrap();
            let got = grid.best_match(&samples, &x, &metric, gate.cos());
            let want = brute_contour_match(&samples, &x, &noise.sigma2d, noise.kappa, gate);
            match (got, want) {
                (None, None) => {}
                (Some((gi, ge)), Some((wi, wv))) => {
                    if gi != wi || (ge.value - wv).abs() > 1e-7 * wv.max(1.0) {
                        out.push(format!("query {q}: candidate {gi} ({}) vs {wi} ({wv})", ge.value));
                    }
                }
                (g, w) => out.push(format!("query {q}: {g:?} vs {w:?}")),
            }
            q += 1;
        }
    }
    out
}

/// Largest deviation of the isotropic 3D-only solve from the closed-form
/// similarity fit: (scale, rotation Frobenius, translation).
pub fn procrustes_worst(instances: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = rng(seed);
    let metric = NoiseModel::default().contour_metric().unwrap();
    let config = InnerSolverConfig {
        max_steps: 500,
        gradient_tolerance: 1e-14,
    };
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let n = rng.random_range(10..100);
        let truth = SimilarityTransform::new(
            rng.random_range(0.5..2.0),
            random_rotation(&mut rng, 1.5),
            unit(&mut rng) * rng.random_range(0.0..10.0),
        )
        .unwrap();
        let x: Vec<Vec3> = (0..n).map(|_| unit(&mut rng) * rng.random_range(1.0..20.0)).collect();
        let y: Vec<Vec3> = x
            .iter()
            .map(|p| truth.apply(p) + unit(&mut rng) * rng.random_range(0.0..1.0))
            .collect();
        let sigma = rng.random_range(0.3..2.0);
        let objective = Objective {
            points: x
                .iter()
                .zip(&y)
                .map(|(a, b)| PointTerm {
                    x: *a,
                    y: *b,
                    w: Mat3::identity() / sigma,
                })
                .collect(),
            contours: vec![],
            frames: vec![],
            metric,
        };
        let solved = solve_transform(&objective, &SimilarityTransform::identity(), [1e-3, 1e3], &config)
            .unwrap()
            .transform;
        let (s, r, t) = umeyama(&x, &y);
        worst.0 = worst.0.max((solved.scale - s).abs());
        worst.1 = worst.1.max((solved.rotation - r).norm());
        worst.2 = worst.2.max((solved.translation - t).norm());
    }
    worst
}
