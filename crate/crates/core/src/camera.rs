//! Pinhole cameras and per-frame poses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::OrientedContourPoint;
use crate::geometry::{Mat3, SimilarityTransform, Vec2, Vec3};

/// Depth below which a point counts as behind the camera, mm.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(Error::Domain("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::Domain("principal point must be finite".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("image size must be positive".into()));
        }
        Ok(())
    }

    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.width as f64 - 0.5
            && pixel.y < self.height as f64 - 0.5
    }
}

/// A camera placed in model coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    /// Rigid camera-from-model transform.
    pub extrinsic: SimilarityTransform,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, extrinsic: SimilarityTransform) -> Self {
        Self {
            intrinsics,
            extrinsic,
        }
    }

    /// Optical center in model coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.extrinsic.rotation.transpose() * self.extrinsic.translation)
    }

    /// Viewing direction (camera +z) in model coordinates.
    pub fn forward(&self) -> Vec3 {
        self.extrinsic.rotation.row(2).transpose()
    }

    #[inline]
    pub fn to_camera(&self, p_model: &Vec3) -> Vec3 {
        self.extrinsic.rotation * p_model + self.extrinsic.translation
    }

    /// Perspective projection of a camera-space point.
    #[inline]
    pub fn project_camera_point(&self, pc: &Vec3) -> Result<Vec2> {
        if !(pc.z > MIN_DEPTH) {
            return Err(Error::BehindCamera(pc.z));
        }
        let k = &self.intrinsics;
        Ok(Vec2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
    }

    /// Pixel position and depth of a model point.
    pub fn project_point(&self, p_model: &Vec3) -> Result<(Vec2, f64)> {
        let pc = self.to_camera(p_model);
        Ok((self.project_camera_point(&pc)?, pc.z))
    }

    /// Camera-space point seen at `pixel` with depth `z`.
    pub fn back_project(&self, pixel: &Vec2, z: f64) -> Vec3 {
        let k = &self.intrinsics;
        Vec3::new((pixel.x - k.cx) / k.fx * z, (pixel.y - k.cy) / k.fy * z, z)
    }

    /// Orthographic projection of a model-space direction, scaled to pixel
    /// units and normalized.
    pub fn project_orientation(&self, n_model: &Vec3) -> Result<Vec2> {
        image_orientation(&self.intrinsics, &(self.extrinsic.rotation * n_model))
    }
}

/// `(fx·nX, fy·nY)` normalized.
#[inline]
pub fn image_orientation(k: &CameraIntrinsics, n_cam: &Vec3) -> Result<Vec2> {
    let v = Vec2::new(k.fx * n_cam.x, k.fy * n_cam.y);
    let norm = v.norm();
    if !(norm >= 1e-9) {
        return Err(Error::DegenerateOrientation);
    }
    Ok(v / norm)
}

/// One video frame: intrinsics, its rigid pose relative to the 3D feature
/// cloud, and the contour points detected in it.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    /// Camera-from-cloud pose, in cloud units.
    pub cloud_pose: SimilarityTransform,
    pub contours: Vec<OrientedContourPoint>,
}

impl CameraFrame {
    /// Optical center in cloud coordinates.
    pub fn center_in_cloud(&self) -> Vec3 {
        -(self.cloud_pose.rotation.transpose() * self.cloud_pose.translation)
    }

    /// Optical center in model coordinates once the cloud is mapped by `t`.
    pub fn center_in_model(&self, t: &SimilarityTransform) -> Vec3 {
        t.apply(&self.center_in_cloud())
    }

    /// Camera-from-model extrinsic induced by the cloud-to-model transform `t`.
    ///
    /// The camera rides with the cloud, so the metric camera frame is
    /// `R_j·Rᵀ·(y − t) + s·t_j`.
    pub fn extrinsic(&self, t: &SimilarityTransform) -> SimilarityTransform {
        let rotation: Mat3 = self.cloud_pose.rotation * t.rotation.transpose();
        SimilarityTransform::rigid(
            rotation,
            t.scale * self.cloud_pose.translation - rotation * t.translation,
        )
    }

    pub fn camera(&self, t: &SimilarityTransform) -> Camera {
        Camera::new(self.intrinsics, self.extrinsic(t))
    }
}
