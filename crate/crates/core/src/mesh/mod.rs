//! Triangle mesh with adjacency, spatial queries, silhouettes and the
//! interior test used by the anatomical constraint.
//!
//! Face normals follow the right-hand rule on the vertex order and are
//! expected to point into the cavity the camera moves through.

mod index;
mod interior;
pub mod shapes;
mod silhouette;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub use index::{
    closest_point_on_triangle, ClosestPoint, MostLikelyPoint, PreparedFeature, SpatialIndex,
    TriangleFeature,
};
pub use interior::{interior_signed_check, Classification, InteriorCheck};
pub use silhouette::{occluding_edges, OccludingEdge};

/// Relative area below which a triangle counts as degenerate.
const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// Incident faces in ingest order.
    pub faces: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Vec3>,
    edges: Vec<Edge>,
    edge_lookup: HashMap<(usize, usize), usize>,
    /// Per face, ids of edges (v0,v1), (v1,v2), (v2,v0).
    face_edges: Vec<[usize; 3]>,
    vertex_normals: Vec<Vec3>,
    edge_normals: Vec<Vec3>,
}

impl TriangleMesh {
    /// Validates indices, rejects degenerate faces, builds adjacency and
    /// checks that orientation is consistent across every shared edge.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyInput("mesh has no triangles"));
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Topology(format!("vertex {i} is not finite")));
        }
        let extent = bounding_extent(&vertices);
        let mut normals = Vec::with_capacity(triangles.len());
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::Topology(format!(
                    "face {f} references vertex {bad}, mesh has {}",
                    vertices.len()
                )));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let n = (b - a).cross(&(c - a));
            let area2 = n.norm();
            if !(area2 > DEGENERATE_AREA * extent * extent) {
                return Err(Error::Topology(format!("face {f} is degenerate (zero area)")));
            }
            normals.push(n / area2);
        }

        let mut edges: Vec<Edge> = Vec::new();
        let mut edge_lookup = HashMap::new();
        // directed use count per undirected edge: (forward, backward)
        let mut directions: Vec<(u32, u32)> = Vec::new();
        let mut face_edges = Vec::with_capacity(triangles.len());
        for (f, tri) in triangles.iter().enumerate() {
            let mut ids = [0usize; 3];
            for k in 0..3 {
                let (u, v) = (tri[k], tri[(k + 1) % 3]);
                let key = (u.min(v), u.max(v));
                let id = *edge_lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        faces: Vec::new(),
                    });
                    directions.push((0, 0));
                    edges.len() - 1
                });
                edges[id].faces.push(f);
                if u < v {
                    directions[id].0 += 1;
                } else {
                    directions[id].1 += 1;
                }
                ids[k] = id;
            }
            face_edges.push(ids);
        }
        for (e, (fwd, bwd)) in edges.iter().zip(&directions) {
            if e.faces.len() == 2 && (*fwd != 1 || *bwd != 1) {
                return Err(Error::Topology(format!(
                    "faces {} and {} have inconsistent orientation across edge ({}, {})",
                    e.faces[0], e.faces[1], e.vertices[0], e.vertices[1]
                )));
            }
        }

        let edge_normals = edges
            .iter()
            .map(|e| {
                let s: Vec3 = e.faces.iter().map(|&f| normals[f]).sum();
                normalize_or(s, normals[e.faces[0]])
            })
            .collect();

        let mut vertex_acc = vec![Vec3::zeros(); vertices.len()];
        for (f, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let p = vertices[tri[k]];
                let e1 = (vertices[tri[(k + 1) % 3]] - p).normalize();
                let e2 = (vertices[tri[(k + 2) % 3]] - p).normalize();
                let angle = e1.dot(&e2).clamp(-1.0, 1.0).acos();
                vertex_acc[tri[k]] += normals[f] * angle;
            }
        }
        let vertex_normals = vertex_acc
            .into_iter()
            .map(|n| normalize_or(n, Vec3::zeros()))
            .collect();

        Ok(Self {
            vertices,
            triangles,
            normals,
            edges,
            edge_lookup,
            face_edges,
            vertex_normals,
            edge_normals,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        self.normals[f]
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.normals
    }

    #[inline]
    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.vertices[i])
    }

    pub fn face_center(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (a + b + c) / 3.0
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_vertices(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        self.edge_lookup.get(&(u.min(v), u.max(v))).copied()
    }

    pub fn face_edges(&self, f: usize) -> [usize; 3] {
        self.face_edges[f]
    }

    /// Angle-weighted vertex pseudo-normal.
    pub fn vertex_normal(&self, v: usize) -> Vec3 {
        self.vertex_normals[v]
    }

    /// Mean of the incident face normals.
    pub fn edge_normal(&self, e: usize) -> Vec3 {
        self.edge_normals[e]
    }

    /// Every edge has exactly two incident faces.
    pub fn is_closed(&self) -> bool {
        self.edges.iter().all(|e| e.faces.len() == 2)
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edges.iter().filter(|e| e.faces.len() == 1).count()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let total: f64 = self
            .edges
            .iter()
            .map(|e| (self.vertices[e.vertices[0]] - self.vertices[e.vertices[1]]).norm())
            .sum();
        total / self.edges.len() as f64
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Same geometry with every face's winding reversed.
    pub fn flipped(&self) -> Result<TriangleMesh> {
        let tris = self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect();
        TriangleMesh::new(self.vertices.clone(), tris)
    }
}

fn bounding_extent(vertices: &[Vec3]) -> f64 {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for v in vertices {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let d = (hi - lo).norm();
    if d.is_finite() && d > 0.0 {
        d
    } else {
        1.0
    }
}

fn normalize_or(v: Vec3, fallback: Vec3) -> Vec3 {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        fallback
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_indices_and_degenerate_faces() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(TriangleMesh::new(v.clone(), vec![]), Err(Error::EmptyInput(_))));
        let err = TriangleMesh::new(v.clone(), vec![[0, 1, 3]]).unwrap_err();
        assert!(err.to_string().contains("face 0"));
        let err = TriangleMesh::new(v.clone(), vec![[0, 1, 1]]).unwrap_err();
        assert!(err.to_string().contains("degenerate"));
        let line = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(TriangleMesh::new(line, vec![[0, 1, 2]]).is_err());
    }

    #[test]
    fn rejects_inconsistent_orientation() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        assert!(TriangleMesh::new(v.clone(), vec![[0, 1, 2], [1, 3, 2]]).is_ok());
        let err = TriangleMesh::new(v, vec![[0, 1, 2], [1, 2, 3]]).unwrap_err();
        assert!(err.to_string().contains("inconsistent orientation"));
    }

    #[test]
    fn cube_adjacency() {
        let cube = shapes::cube(1.0);
        assert_eq!(cube.face_count(), 12);
        assert_eq!(cube.edges().len(), 18);
        assert!(cube.is_closed());
        for f in 0..12 {
            let n = cube.face_normal(f);
            assert!((n.norm() - 1.0).abs() < 1e-12);
            // outward for the plain cube
            assert!(n.dot(&cube.face_center(f)) > 0.0);
        }
    }
}
