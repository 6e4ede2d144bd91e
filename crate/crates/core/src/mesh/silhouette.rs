use crate::error::{Error, Result};
use crate::geometry::Vec3;

use super::TriangleMesh;

/// A mesh edge separating a face turned toward the camera from one turned away.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OccludingEdge {
    pub edge: usize,
    pub endpoints: [Vec3; 2],
    pub front_face: usize,
    /// `None` for a front-facing boundary edge.
    pub back_face: Option<usize>,
    /// Surface normal along the edge (mean of incident face normals).
    pub surface_normal: Vec3,
}

#[inline]
fn faces_camera(mesh: &TriangleMesh, f: usize, point: &Vec3, camera_center: &Vec3) -> bool {
    mesh.face_normal(f).dot(&(camera_center - point)) > 0.0
}

/// All occluding edges of `mesh` for a camera at `camera_center`, in edge-id order.
pub fn occluding_edges(mesh: &TriangleMesh, camera_center: &Vec3) -> Result<Vec<OccludingEdge>> {
    let mut out = Vec::new();
    for (id, e) in mesh.edges().iter().enumerate() {
        let p = mesh.vertices()[e.vertices[0]];
        let q = mesh.vertices()[e.vertices[1]];
        match e.faces.as_slice() {
            [f] => {
                if faces_camera(mesh, *f, &p, camera_center) {
                    out.push(OccludingEdge {
                        edge: id,
                        endpoints: [p, q],
                        front_face: *f,
                        back_face: None,
                        surface_normal: mesh.edge_normal(id),
                    });
                }
            }
            [f1, f2] => {
                let a = faces_camera(mesh, *f1, &p, camera_center);
                let b = faces_camera(mesh, *f2, &p, camera_center);
                if a != b {
                    let (front, back) = if a { (*f1, *f2) } else { (*f2, *f1) };
                    out.push(OccludingEdge {
                        edge: id,
                        endpoints: [p, q],
                        front_face: front,
                        back_face: Some(back),
                        surface_normal: mesh.edge_normal(id),
                    });
                }
            }
            faces => {
                return Err(Error::NonManifoldEdge(e.vertices[0], e.vertices[1], faces.len()));
            }
        }
    }
    Ok(out)
}
