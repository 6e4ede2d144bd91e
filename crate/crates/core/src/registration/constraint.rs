//! Keeps every estimated camera center inside the cavity.

use crate::camera::CameraFrame;
use crate::correspondence::IndexedMesh;
use crate::error::{Error, Result};
use crate::geometry::SimilarityTransform;
use crate::mesh::interior_signed_check;

/// Backups stop once the blend factor falls below this and fall back to
/// the previous transform.
const MIN_BLEND: f64 = 1e-6;

/// Index of the first frame whose optical center is exterior under `t`.
pub fn first_exterior_camera(frames: &[CameraFrame], mesh: &IndexedMesh, t: &SimilarityTransform) -> Option<usize> {
    frames
        .iter()
        .position(|f| !interior_signed_check(&mesh.mesh, &mesh.index, &f.center_in_model(t)).is_interior())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackupOutcome {
    pub transform: SimilarityTransform,
    /// Fraction of the update kept: 1 if `t_new` was feasible, 0 if the
    /// previous transform was returned.
    pub factor: f64,
}

/// Returns `t_new` if all camera centers are interior, otherwise the first
/// feasible blend `T_prev → T_new` among factors `f, f², …` (translation and
/// log-scale linear, rotation geodesic), or `T_prev` if none is.
pub fn enforce_interior(
    frames: &[CameraFrame],
    mesh: &IndexedMesh,
    t_prev: &SimilarityTransform,
    t_new: &SimilarityTransform,
    backup_fraction: f64,
) -> Result<BackupOutcome> {
    if let Some(frame) = first_exterior_camera(frames, mesh, t_prev) {
        return Err(Error::InfeasibleInit { frame });
    }
    if first_exterior_camera(frames, mesh, t_new).is_none() {
        return Ok(BackupOutcome {
            transform: *t_new,
            factor: 1.0,
        });
    }
    let mut f = backup_fraction;
    while f >= MIN_BLEND {
        let blend = t_prev.interpolate(t_new, f);
        if first_exterior_camera(frames, mesh, &blend).is_none() {
            return Ok(BackupOutcome {
                transform: blend,
                factor: f,
            });
        }
        f *= backup_fraction;
    }
    Ok(BackupOutcome {
        transform: *t_prev,
        factor: 0.0,
    })
}
