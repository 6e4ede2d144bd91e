//! Similarity transforms and small rotation helpers.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHONORMAL_TOL: f64 = 1e-9;

/// `x -> s * R * x + t`.
///
/// Serialized as `{"scale", "rotation": [w, x, y, z], "translation"}`; the
/// quaternion is normalized on ingest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Validating constructor.
    pub fn new(scale: f64, rotation: Mat3, translation: Vec3) -> Result<Self> {
        let t = Self {
            scale,
            rotation,
            translation,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn rigid(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            scale: 1.0,
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    /// Builds a transform from a (possibly unnormalized) quaternion given as `[w, x, y, z]`.
    pub fn from_quaternion(scale: f64, wxyz: [f64; 4], translation: Vec3) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Domain("quaternion has zero or non-finite norm".into()));
        }
        let rotation = UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        Self::new(scale, rotation, translation)
    }

    /// Unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        let c = q.as_ref().coords;
        let (w, x, y, z) = (c[3], c[0], c[1], c[2]);
        if w < 0.0 {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::Domain(format!("scale must be positive, got {}", self.scale)));
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("translation is not finite".into()));
        }
        let gram = self.rotation.transpose() * self.rotation - Mat3::identity();
        if gram.iter().any(|v| !(v.abs() <= ORTHONORMAL_TOL)) {
            return Err(Error::Domain("rotation is not orthonormal".into()));
        }
        if (self.rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::Domain("rotation determinant is not +1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Applies the linear part only.
    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.scale * (self.rotation * v)
    }

    /// `self ∘ other`, i.e. `other` is applied first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.scale * (self.rotation * other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let rt = self.rotation.transpose();
        SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    /// Applies a parameter increment: `s' = s·e^a`, `R' = exp([ω]×)·R`, `t' = t + τ`.
    pub fn perturbed(&self, log_scale: f64, omega: &Vec3, tau: &Vec3) -> SimilarityTransform {
        SimilarityTransform {
            scale: self.scale * log_scale.exp(),
            rotation: exp_so3(omega) * self.rotation,
            translation: self.translation + tau,
        }
    }

    /// Moves a fraction `f` of the way from `self` to `target`: translation and
    /// log-scale linearly, rotation along the geodesic.
    pub fn interpolate(&self, target: &SimilarityTransform, f: f64) -> SimilarityTransform {
        let delta = target.rotation * self.rotation.transpose();
        let omega = log_so3(&delta);
        SimilarityTransform {
            scale: (self.scale.ln() * (1.0 - f) + target.scale.ln() * f).exp(),
            rotation: exp_so3(&(omega * f)) * self.rotation,
            translation: self.translation * (1.0 - f) + target.translation * f,
        }
    }

    /// Re-orthonormalizes the rotation (guards drift after many compositions).
    pub fn renormalized(&self) -> SimilarityTransform {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        SimilarityTransform {
            rotation: q.to_rotation_matrix().into_inner(),
            ..*self
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRepr {
    scale: f64,
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<SimilarityTransform> for TransformRepr {
    fn from(t: SimilarityTransform) -> Self {
        Self {
            scale: t.scale,
            rotation: t.quaternion_wxyz(),
            translation: t.translation.into(),
        }
    }
}

impl TryFrom<TransformRepr> for SimilarityTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        SimilarityTransform::from_quaternion(r.scale, r.rotation, Vec3::from(r.translation))
    }
}

/// Rodrigues' formula.
pub fn exp_so3(omega: &Vec3) -> Mat3 {
    Rotation3::new(*omega).into_inner()
}

/// Rotation vector of `r`, angle in `[0, π]`.
pub fn log_so3(r: &Mat3) -> Vec3 {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let c = ((a.transpose() * b).trace() - 1.0) * 0.5;
    c.clamp(-1.0, 1.0).acos()
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Any unit vector orthogonal to `v`.
pub fn any_orthogonal(v: &Vec3) -> Vec3 {
    let a = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&a).normalize()
}

/// Rotation that maps the camera's +z axis onto `forward`, with camera +y
/// as close as possible to `down`. Returned as camera-to-world.
pub fn look_rotation(forward: &Vec3, down: &Vec3) -> Mat3 {
    let z = forward.normalize();
    let mut x = down.cross(&z);
    if x.norm() < 1e-9 {
        x = any_orthogonal(&z);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Mat3::from_columns(&[x, y, z])
}
