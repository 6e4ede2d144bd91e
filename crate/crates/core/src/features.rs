//! Data features, the noise model, and the per-match error terms.

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mat2, Mat3, SimilarityTransform, Vec2, Vec3};
use crate::serde_util::{mat2_rows, mat3_rows};

/// A 3D data point with its positional covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feature3D {
    pub position: Vec3,
    pub covariance: Mat3,
}

impl Feature3D {
    pub fn new(position: Vec3, covariance: Mat3) -> Result<Self> {
        check_spd3(&covariance)?;
        Ok(Self {
            position,
            covariance,
        })
    }

    pub fn isotropic(position: Vec3, variance: f64) -> Result<Self> {
        Self::new(position, Mat3::identity() * variance)
    }

    /// Inverse of the lower Cholesky factor of the covariance.
    pub fn inverse_sqrt(&self) -> Result<Mat3> {
        inverse_cholesky3(&self.covariance)
    }
}

/// An oriented 2D contour point observed in one video frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientedContourPoint {
    pub position: Vec2,
    pub normal: Vec2,
    pub frame_id: usize,
}

impl OrientedContourPoint {
    /// Normalizes `normal`; rejects zero or non-finite input.
    pub fn new(position: Vec2, normal: Vec2, frame_id: usize) -> Result<Self> {
        let n = normal.norm();
        if !(n.is_finite() && n > 1e-12) || !position.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("contour point needs a finite position and a nonzero normal".into()));
        }
        Ok(Self {
            position,
            normal: normal / n,
            frame_id,
        })
    }
}

fn check_spd3(m: &Mat3) -> Result<()> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidCovariance("non-finite entry".into()));
    }
    if (m - m.transpose()).abs().max() > 1e-9 * (1.0 + m.abs().max()) {
        return Err(Error::InvalidCovariance("matrix is not symmetric".into()));
    }
    if Cholesky::new(*m).is_none() {
        return Err(Error::InvalidCovariance("matrix is not positive definite".into()));
    }
    Ok(())
}

pub(crate) fn inverse_cholesky3(m: &Mat3) -> Result<Mat3> {
    let chol = Cholesky::new(*m)
        .ok_or_else(|| Error::InvalidCovariance("Cholesky factorization failed".into()))?;
    chol.l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidCovariance("singular Cholesky factor".into()))
}

pub(crate) fn inverse_cholesky2(m: &Mat2) -> Result<Mat2> {
    let chol = Cholesky::new(*m)
        .ok_or_else(|| Error::InvalidCovariance("2D covariance is not positive definite".into()))?;
    chol.l()
        .try_inverse()
        .ok_or_else(|| Error::InvalidCovariance("singular Cholesky factor".into()))
}

/// User-defined measurement noise and rejection parameters. Fixed during a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// 2D contour position covariance, pixels².
    #[serde(with = "mat2_rows")]
    pub sigma2d: Mat2,
    /// von Mises concentration of contour orientations.
    pub kappa: f64,
    /// Covariance assigned to 3D features that come without one, mm².
    #[serde(with = "mat3_rows")]
    pub sigma3d_default: Mat3,
    /// Initial fraction of worst 3D matches trimmed each iteration.
    pub trim_ratio_3d: f64,
    /// Number of outer iterations over which the trim ratio decays to zero.
    /// Zero keeps it fixed.
    pub trim_decay_iterations: usize,
    pub chi2_p: f64,
    /// Largest admissible angle between matched contour normals, radians.
    pub orientation_gate: f64,
    /// Largest fraction of a frame's contour points that may be rejected.
    pub contour_outlier_cap: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma2d: Mat2::identity() * 9.0,
            kappa: 200.0,
            sigma3d_default: Mat3::identity() * 0.25,
            trim_ratio_3d: 0.1,
            trim_decay_iterations: 10,
            chi2_p: 0.95,
            orientation_gate: std::f64::consts::FRAC_PI_4,
            contour_outlier_cap: 0.5,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Domain(format!("kappa must be positive, got {}", self.kappa)));
        }
        if !(self.chi2_p > 0.0 && self.chi2_p < 1.0) {
            return Err(Error::Domain(format!("chi2_p must lie in (0,1), got {}", self.chi2_p)));
        }
        if !(0.0..1.0).contains(&self.trim_ratio_3d) {
            return Err(Error::Domain(format!(
                "trim_ratio_3d must lie in [0,1), got {}",
                self.trim_ratio_3d
            )));
        }
        if !(self.orientation_gate > 0.0 && self.orientation_gate <= std::f64::consts::PI) {
            return Err(Error::Domain("orientation_gate must lie in (0, π]".into()));
        }
        if !(self.contour_outlier_cap > 0.0 && self.contour_outlier_cap <= 1.0) {
            return Err(Error::Domain("contour_outlier_cap must lie in (0,1]".into()));
        }
        check_spd3(&self.sigma3d_default)?;
        inverse_cholesky2(&self.sigma2d)?;
        if (self.sigma2d[(0, 1)] - self.sigma2d[(1, 0)]).abs() > 1e-12 {
            return Err(Error::InvalidCovariance("sigma2d is not symmetric".into()));
        }
        Ok(())
    }

    /// Trim ratio in effect at a 0-based outer iteration.
    pub fn trim_ratio_at(&self, iteration: usize) -> f64 {
        if self.trim_decay_iterations == 0 {
            return self.trim_ratio_3d;
        }
        let left = 1.0 - iteration as f64 / self.trim_decay_iterations as f64;
        self.trim_ratio_3d * left.max(0.0)
    }

    pub fn contour_metric(&self) -> Result<ContourMetric> {
        let l_inv = inverse_cholesky2(&self.sigma2d)?;
        let lambda_max = self.sigma2d.symmetric_eigenvalues().max();
        Ok(ContourMetric {
            l_inv,
            kappa: self.kappa,
            lambda_max,
        })
    }
}

/// 3D match error: `½ rᵀ (RΣRᵀ)⁻¹ r` with `r = y − sRx − t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchError3 {
    pub value: f64,
    pub residual: Vec3,
}

/// 2D contour match error split into its positional and orientation parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchError2 {
    pub value: f64,
    pub positional_term: f64,
    pub orientation_term: f64,
}

pub fn match_error_3d(x: &Feature3D, y: &Vec3, t: &SimilarityTransform) -> Result<MatchError3> {
    let l_inv = x.inverse_sqrt()?;
    Ok(match_error_3d_whitened(&l_inv, &x.position, y, t))
}

/// Same as [`match_error_3d`] with a precomputed inverse Cholesky factor.
#[inline]
pub fn match_error_3d_whitened(l_inv: &Mat3, x: &Vec3, y: &Vec3, t: &SimilarityTransform) -> MatchError3 {
    let residual = y - t.apply(x);
    let e = l_inv * (t.rotation.transpose() * residual);
    MatchError3 {
        value: 0.5 * e.norm_squared(),
        residual,
    }
}

/// Precomputed Σ₂d factorization and κ for repeated contour error evaluation.
#[derive(Clone, Copy, Debug)]
pub struct ContourMetric {
    pub l_inv: Mat2,
    pub kappa: f64,
    /// Largest eigenvalue of Σ₂d; converts pixel distances into error lower bounds.
    pub lambda_max: f64,
}

impl ContourMetric {
    #[inline]
    pub fn positional(&self, delta: &Vec2) -> f64 {
        0.5 * (self.l_inv * delta).norm_squared()
    }

    #[inline]
    pub fn orientation(&self, a: &Vec2, b: &Vec2) -> f64 {
        self.kappa * (1.0 - a.dot(b).clamp(-1.0, 1.0))
    }

    #[inline]
    pub fn error(&self, x: &OrientedContourPoint, y_pos: &Vec2, y_normal: &Vec2) -> MatchError2 {
        let positional_term = self.positional(&(y_pos - x.position));
        let orientation_term = self.orientation(y_normal, &x.normal);
        MatchError2 {
            value: positional_term + orientation_term,
            positional_term,
            orientation_term,
        }
    }

    /// Lower bound on the positional term for a pixel distance `d`.
    #[inline]
    pub fn positional_lower_bound(&self, d: f64) -> f64 {
        0.5 * d * d / self.lambda_max
    }
}

pub fn match_error_2d(
    x: &OrientedContourPoint,
    y_pos: &Vec2,
    y_normal: &Vec2,
    noise: &NoiseModel,
) -> Result<MatchError2> {
    Ok(noise.contour_metric()?.error(x, y_pos, y_normal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::exp_so3;
    use proptest::prelude::*;

    fn origin_feature(cov: Mat3) -> Feature3D {
        Feature3D::new(Vec3::zeros(), cov).unwrap()
    }

    #[test]
    fn match_error_3d_examples() {
        let t = SimilarityTransform::identity();
        let f = origin_feature(Mat3::identity());
        assert_eq!(match_error_3d(&f, &Vec3::zeros(), &t).unwrap().value, 0.0);
        assert_eq!(match_error_3d(&f, &Vec3::x(), &t).unwrap().value, 0.5);
        let f = origin_feature(Mat3::from_diagonal(&Vec3::new(4.0, 1.0, 1.0)));
        let e = match_error_3d(&f, &Vec3::new(2.0, 0.0, 0.0), &t).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
        assert_eq!(e.residual, Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn rejects_non_spd_covariance() {
        assert!(matches!(
            Feature3D::new(Vec3::zeros(), Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 1.0))),
            Err(Error::InvalidCovariance(_))
        ));
        let mut asym = Mat3::identity();
        asym[(0, 1)] = 0.5;
        assert!(Feature3D::new(Vec3::zeros(), asym).is_err());
        let bad = Feature3D {
            position: Vec3::zeros(),
            covariance: Mat3::zeros(),
        };
        assert!(match_error_3d(&bad, &Vec3::x(), &SimilarityTransform::identity()).is_err());
    }

    #[test]
    fn match_error_2d_examples() {
        let noise = NoiseModel::default();
        let x = OrientedContourPoint::new(Vec2::new(10.0, 20.0), Vec2::x(), 0).unwrap();
        let e = match_error_2d(&x, &x.position, &Vec2::x(), &noise).unwrap();
        assert_eq!(e.value, 0.0);
        let e = match_error_2d(&x, &x.position, &-Vec2::x(), &noise).unwrap();
        assert_eq!(e.value, 400.0);
        assert_eq!(e.orientation_term, 400.0);
        let e = match_error_2d(&x, &(x.position + Vec2::new(3.0, 0.0)), &Vec2::x(), &noise).unwrap();
        assert!((e.value - 0.5).abs() < 1e-15);
        assert_eq!(e.value, e.positional_term + e.orientation_term);
    }

    #[test]
    fn contour_normals_are_normalized() {
        let p = OrientedContourPoint::new(Vec2::zeros(), Vec2::new(3.0, 4.0), 2).unwrap();
        assert!((p.normal.norm() - 1.0).abs() < 1e-15);
        assert!(OrientedContourPoint::new(Vec2::zeros(), Vec2::zeros(), 0).is_err());
    }

    #[test]
    fn trim_schedule_decays() {
        let n = NoiseModel::default();
        assert_eq!(n.trim_ratio_at(0), 0.1);
        assert!((n.trim_ratio_at(5) - 0.05).abs() < 1e-15);
        assert_eq!(n.trim_ratio_at(10), 0.0);
        assert_eq!(n.trim_ratio_at(50), 0.0);
    }

    #[test]
    fn noise_model_rejects_unknown_keys() {
        let err = serde_json::from_str::<NoiseModel>(r#"{"kapa": 10}"#);
        assert!(err.is_err());
        let ok: NoiseModel = serde_json::from_str(r#"{"kappa": 10, "sigma2d": [[4,0],[0,4]]}"#).unwrap();
        assert_eq!(ok.kappa, 10.0);
        assert_eq!(ok.sigma2d, Mat2::identity() * 4.0);
    }

    fn arb_spd() -> impl Strategy<Value = Mat3> {
        (prop::array::uniform3(0.1f64..5.0), prop::array::uniform3(-3.0f64..3.0)).prop_map(|(d, w)| {
            let r = exp_so3(&Vec3::from(w));
            r * Mat3::from_diagonal(&Vec3::from(d)) * r.transpose()
        })
    }

    proptest! {
        #[test]
        fn rigid_invariance(
            cov in arb_spd(),
            x in prop::array::uniform3(-5.0f64..5.0),
            y in prop::array::uniform3(-5.0f64..5.0),
            w in prop::array::uniform3(-2.0f64..2.0),
            g in prop::array::uniform3(-2.0f64..2.0),
            gt in prop::array::uniform3(-10.0f64..10.0),
            ls in -0.5f64..0.5,
        ) {
            let f = Feature3D::new(Vec3::from(x), cov).unwrap();
            let t = SimilarityTransform::identity().perturbed(ls, &Vec3::from(w), &Vec3::zeros());
            let rigid = SimilarityTransform::rigid(exp_so3(&Vec3::from(g)), Vec3::from(gt));
            let y = Vec3::from(y);
            let before = match_error_3d(&f, &y, &t).unwrap().value;
            let after = match_error_3d(&f, &rigid.apply(&y), &rigid.compose(&t)).unwrap().value;
            prop_assert!((before - after).abs() < 1e-9 * (1.0 + before));
        }

        #[test]
        fn covariance_scaling(cov in arb_spd(), y in prop::array::uniform3(-5.0f64..5.0), c in 0.1f64..10.0) {
            let t = SimilarityTransform::identity();
            let y = Vec3::from(y);
            let a = match_error_3d(&origin_feature(cov), &y, &t).unwrap().value;
            let b = match_error_3d(&origin_feature(cov * c), &y, &t).unwrap().value;
            prop_assert!((b - a / c).abs() < 1e-9 * (1.0 + a));
        }

        #[test]
        fn orientation_term_bounded(a in 0.0f64..7.0, b in 0.0f64..7.0, kappa in 0.1f64..1000.0) {
            let noise = NoiseModel { kappa, ..NoiseModel::default() };
            let x = OrientedContourPoint::new(Vec2::zeros(), Vec2::new(a.cos(), a.sin()), 0).unwrap();
            let e = match_error_2d(&x, &Vec2::zeros(), &Vec2::new(b.cos(), b.sin()), &noise).unwrap();
            prop_assert!(e.orientation_term >= 0.0 && e.orientation_term <= 2.0 * kappa);
        }
    }
}
