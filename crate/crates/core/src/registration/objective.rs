//! The fixed-correspondence objective and its damped Gauss–Newton solver.
//!
//! Parameters are `[ω (3), τ (3), a]` applied through
//! [`SimilarityTransform::perturbed`]: `s·eᵃ`, `exp([ω]×)·R`, `t + τ`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::camera::{CameraFrame, CameraIntrinsics, MIN_DEPTH};
use crate::correspondence::{Match2, Match3};
use crate::error::{Error, Result};
use crate::features::ContourMetric;
use crate::geometry::{skew, Mat3, SimilarityTransform, Vec2, Vec3};
use crate::mesh::PreparedFeature;

pub type Vec7 = SVector<f64, 7>;
pub type Mat7 = SMatrix<f64, 7, 7>;
pub type Jac3 = SMatrix<f64, 3, 7>;

const SCALE: usize = 6;

/// One frozen 3D pair, whitened by the covariance and the balance factor.
#[derive(Clone, Copy, Debug)]
pub struct PointTerm {
    pub x: Vec3,
    pub y: Vec3,
    /// `L⁻¹/√b` for `Σ = LLᵀ` and balance factor `b`.
    pub w: Mat3,
}

impl PointTerm {
    /// `w·(Rᵀ(y − t) − s·x)`; half its squared norm is the 3D match error.
    pub fn residual(&self, t: &SimilarityTransform) -> Vec3 {
        self.w * (t.rotation.transpose() * (self.y - t.translation) - t.scale * self.x)
    }

    pub fn jacobian(&self, t: &SimilarityTransform) -> Jac3 {
        let rt = t.rotation.transpose();
        let mut j = Jac3::zeros();
        j.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(self.w * rt * skew(&(self.y - t.translation))));
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-(self.w * rt)));
        j.set_column(SCALE, &(-(t.scale * (self.w * self.x))));
        j
    }
}

/// One frozen contour pair: the observed point and the matched model
/// contour point and normal, which ride with the mesh.
#[derive(Clone, Copy, Debug)]
pub struct ContourTerm {
    pub frame: usize,
    pub observed: Vec2,
    pub observed_normal: Vec2,
    pub model_point: Vec3,
    pub model_normal: Vec3,
}

/// Camera data a contour term needs: intrinsics and the camera-from-cloud pose.
#[derive(Clone, Copy, Debug)]
pub struct FramePose {
    pub intrinsics: CameraIntrinsics,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl From<&CameraFrame> for FramePose {
    fn from(f: &CameraFrame) -> Self {
        Self {
            intrinsics: f.intrinsics,
            rotation: f.cloud_pose.rotation,
            translation: f.cloud_pose.translation,
        }
    }
}

#[inline]
fn cross2(a: &Vec2, b: &Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

impl ContourTerm {
    /// Position residual `L₂⁻¹(π(p) − x)` and orientation residual
    /// `2√κ·sin(θ/2)`, whose half square is exactly `κ(1 − cos θ)`.
    pub fn residual(&self, pose: &FramePose, metric: &ContourMetric, t: &SimilarityTransform) -> Option<Vec3> {
        self.evaluate(pose, metric, t, false).map(|(r, _)| r)
    }

    pub fn jacobian(&self, pose: &FramePose, metric: &ContourMetric, t: &SimilarityTransform) -> Option<Jac3> {
        self.evaluate(pose, metric, t, true).map(|(_, j)| j)
    }

    fn evaluate(
        &self,
        pose: &FramePose,
        metric: &ContourMetric,
        t: &SimilarityTransform,
        with_jacobian: bool,
    ) -> Option<(Vec3, Jac3)> {
        let k = &pose.intrinsics;
        let re = pose.rotation * t.rotation.transpose();
        let d = self.model_point - t.translation;
        let p = re * d + t.scale * pose.translation;
        if !(p.z > MIN_DEPTH) {
            return None;
        }
        let pixel = Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        let rp = metric.l_inv * (pixel - self.observed);

        let nc = re * self.model_normal;
        let v = Vec2::new(k.fx * nc.x, k.fy * nc.y);
        let v2 = v.norm_squared();
        if !(v2 > 1e-18) {
            return None;
        }
        let x = &self.observed_normal;
        let theta = cross2(x, &v).atan2(x.dot(&v));
        let sk = metric.kappa.sqrt();
        let ro = 2.0 * sk * (0.5 * theta).sin();
        let r = Vec3::new(rp.x, rp.y, ro);
        if !with_jacobian {
            return Some((r, Jac3::zeros()));
        }

        let iz = 1.0 / p.z;
        let dpix = SMatrix::<f64, 2, 3>::new(
            k.fx * iz,
            0.0,
            -k.fx * p.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * p.y * iz * iz,
        );
        let lpix: SMatrix<f64, 2, 3> = metric.l_inv * dpix;
        let mut j = Jac3::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(lpix * re * skew(&d)));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&(-(lpix * re)));
        j.fixed_view_mut::<2, 1>(0, SCALE)
            .copy_from(&(lpix * (t.scale * pose.translation)));

        // dθ/dv · dv/dn_c · dn_c/dω
        let dtheta_dv = Vec2::new(-v.y, v.x) / v2;
        let dv_dn = SMatrix::<f64, 2, 3>::new(k.fx, 0.0, 0.0, 0.0, k.fy, 0.0);
        let dn_dw = re * skew(&self.model_normal);
        let g = (dtheta_dv.transpose() * dv_dn * dn_dw) * (sk * (0.5 * theta).cos());
        j.fixed_view_mut::<1, 3>(2, 0).copy_from(&g);
        Some((r, j))
    }
}

/// Total match error with correspondences and inlier flags frozen.
#[derive(Clone, Debug)]
pub struct Objective {
    pub points: Vec<PointTerm>,
    pub contours: Vec<ContourTerm>,
    pub frames: Vec<FramePose>,
    pub metric: ContourMetric,
}

impl Objective {
    /// Collects the inlier matches. 3D covariances are scaled by `balance`.
    pub fn new(
        features: &[PreparedFeature],
        matches3: &[Match3],
        frames: &[CameraFrame],
        matches2: &[Match2],
        metric: ContourMetric,
        balance: f64,
    ) -> Self {
        let wscale = 1.0 / balance.sqrt();
        let points = matches3
            .iter()
            .filter(|m| m.inlier)
            .map(|m| {
                let f = &features[m.feature];
                PointTerm {
                    x: f.position,
                    y: m.point,
                    w: f.l_inv * wscale,
                }
            })
            .collect();
        let contours = matches2
            .iter()
            .filter(|m| m.inlier && m.candidate.is_some())
            .map(|m| {
                let x = &frames[m.frame].contours[m.contour];
                ContourTerm {
                    frame: m.frame,
                    observed: x.position,
                    observed_normal: x.normal,
                    model_point: m.model_point,
                    model_normal: m.model_normal,
                }
            })
            .collect();
        Self {
            points,
            contours,
            frames: frames.iter().map(FramePose::from).collect(),
            metric,
        }
    }

    /// Objective value; `+∞` if any contour point leaves the front of its camera.
    pub fn value(&self, t: &SimilarityTransform) -> f64 {
        let mut total = 0.0;
        for p in &self.points {
            total += 0.5 * p.residual(t).norm_squared();
        }
        for c in &self.contours {
            match c.residual(&self.frames[c.frame], &self.metric, t) {
                Some(r) => total += 0.5 * r.norm_squared(),
                None => return f64::INFINITY,
            }
        }
        total
    }

    /// Value, Gauss–Newton matrix `JᵀJ` and gradient `Jᵀr`.
    pub fn linearize(&self, t: &SimilarityTransform) -> Option<(f64, Mat7, Vec7)> {
        let mut h = Mat7::zeros();
        let mut g = Vec7::zeros();
        let mut f = 0.0;
        for p in &self.points {
            let r = p.residual(t);
            let j = p.jacobian(t);
            f += 0.5 * r.norm_squared();
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        for c in &self.contours {
            let (r, j) = c.evaluate(&self.frames[c.frame], &self.metric, t, true)?;
            f += 0.5 * r.norm_squared();
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        Some((f, h, g))
    }

    pub fn gradient(&self, t: &SimilarityTransform) -> Option<Vec7> {
        self.linearize(t).map(|(_, _, g)| g)
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.contours.is_empty()
    }
}

/// Inner solver limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InnerSolverConfig {
    pub max_steps: usize,
    /// Stop when `‖g‖∞ ≤ tol·max(1, f)`.
    pub gradient_tolerance: f64,
}

impl Default for InnerSolverConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOutcome {
    pub transform: SimilarityTransform,
    pub initial_value: f64,
    pub final_value: f64,
    pub steps: usize,
}

/// Relative eigenvalue floor of the Jacobi-scaled normal matrix.
const RANK_TOL: f64 = 1e-12;

fn free_indices(fixed_scale: bool) -> &'static [usize] {
    if fixed_scale {
        &[0, 1, 2, 3, 4, 5]
    } else {
        &[0, 1, 2, 3, 4, 5, 6]
    }
}

fn check_rank(h: &Mat7, free: &[usize]) -> Result<()> {
    let n = free.len();
    let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            m[(a, b)] = h[(i, j)];
        }
    }
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateGeometry(format!(
            "parameter {} is unconstrained by the current matches",
            free[i]
        )));
    }
    for a in 0..n {
        for b in 0..n {
            m[(a, b)] /= (d[a] * d[b]).sqrt();
        }
    }
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > RANK_TOL * hi) {
        return Err(Error::DegenerateGeometry(format!(
            "normal equations are rank deficient (eigenvalue ratio {:.3e})",
            lo / hi
        )));
    }
    Ok(())
}

/// Solves `(H + λ·diag H)δ = −g` over the free parameters, holding
/// the entries in `fixed` at their given values.
fn damped_step(h: &Mat7, g: &Vec7, lambda: f64, free: &[usize], fixed: Option<(usize, f64)>) -> Option<Vec7> {
    let n = free.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[(r, c)] = h[(i, j)];
        }
        a[(r, r)] += lambda * h[(i, i)];
        b[r] = -g[i];
        if let Some((k, v)) = fixed {
            b[r] -= h[(i, k)] * v;
        }
    }
    let x = a.cholesky()?.solve(&b);
    let mut step = Vec7::zeros();
    for (r, &i) in free.iter().enumerate() {
        step[i] = x[r];
    }
    if let Some((k, v)) = fixed {
        step[k] = v;
    }
    Some(step)
}

fn apply_step(t: &SimilarityTransform, step: &Vec7, scale_override: Option<f64>) -> SimilarityTransform {
    let mut next = t.perturbed(
        step[SCALE],
        &Vec3::new(step[0], step[1], step[2]),
        &Vec3::new(step[3], step[4], step[5]),
    );
    if let Some(s) = scale_override {
        next.scale = s;
    }
    next.renormalized()
}

/// Levenberg–Marquardt on the frozen objective. A step is accepted only if
/// it lowers the exact objective, so the result never scores worse than the
/// (scale-clamped) start. Scale leaving `scale_bounds` is clamped and the
/// remaining six parameters re-solved with it held.
pub fn solve_transform(
    objective: &Objective,
    t_init: &SimilarityTransform,
    scale_bounds: [f64; 2],
    config: &InnerSolverConfig,
) -> Result<SolveOutcome> {
    let [s_lo, s_hi] = scale_bounds;
    let fixed_scale = s_lo == s_hi;
    let mut t = *t_init;
    t.scale = t.scale.clamp(s_lo, s_hi);
    let free_all = free_indices(fixed_scale);

    let Some((mut f, mut h, mut g)) = objective.linearize(&t) else {
        return Err(Error::DegenerateGeometry("a matched contour point is behind its camera".into()));
    };
    let initial_value = f;
    check_rank(&h, free_all)?;

    let mut lambda = 1e-6;
    let mut steps = 0;
    while steps < config.max_steps {
        if g.amax() <= config.gradient_tolerance * f.max(1.0) {
            break;
        }
        let mut accepted = None;
        while lambda <= 1e10 {
            let Some(mut step) = damped_step(&h, &g, lambda, free_all, None) else {
                lambda *= 10.0;
                continue;
            };
            let mut scale_override = None;
            if !fixed_scale {
                let s_new = t.scale * step[SCALE].exp();
                if s_new < s_lo || s_new > s_hi {
                    let s_clamped = s_new.clamp(s_lo, s_hi);
                    let a = (s_clamped / t.scale).ln();
                    match damped_step(&h, &g, lambda, free_indices(true), Some((SCALE, a))) {
                        Some(s) => step = s,
                        None => {
                            lambda *= 10.0;
                            continue;
                        }
                    }
                    scale_override = Some(s_clamped);
                }
            }
            let candidate = apply_step(&t, &step, scale_override);
            let f_new = objective.value(&candidate);
            if f_new < f {
                accepted = Some((candidate, f_new, step));
                lambda = (lambda * 0.1).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }
        let Some((candidate, _, step)) = accepted else {
            break;
        };
        steps += 1;
        t = candidate;
        // accepted steps have a finite objective, so linearization succeeds
        let Some((fv, hv, gv)) = objective.linearize(&t) else {
            break;
        };
        (f, h, g) = (fv, hv, gv);
        if step.amax() < 1e-14 {
            break;
        }
    }
    Ok(SolveOutcome {
        transform: t,
        initial_value,
        final_value: f,
        steps,
    })
}
