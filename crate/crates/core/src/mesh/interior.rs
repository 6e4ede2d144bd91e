use crate::geometry::Vec3;

use super::{SpatialIndex, TriangleFeature, TriangleMesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Classification {
    Interior,
    Exterior,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteriorCheck {
    pub classification: Classification,
    pub nearest: Vec3,
    pub normal: Vec3,
    pub distance: f64,
}

impl InteriorCheck {
    pub fn is_interior(&self) -> bool {
        self.classification == Classification::Interior
    }
}

/// Classifies `q` against a closed mesh whose normals face the cavity.
///
/// The normal at the nearest point is the face normal, the mean of the two
/// face normals on an edge, or the angle-weighted pseudo-normal at a vertex,
/// so the sign test stays correct at creases. Points on the surface are
/// reported as exterior.
pub fn interior_signed_check(mesh: &TriangleMesh, index: &SpatialIndex, q: &Vec3) -> InteriorCheck {
    let cp = index.closest_point(mesh, q);
    let tri = mesh.triangles()[cp.face];
    let normal = match cp.feature {
        TriangleFeature::Face => mesh.face_normal(cp.face),
        TriangleFeature::Edge(k) => mesh.edge_normal(mesh.face_edges(cp.face)[k as usize]),
        TriangleFeature::Vertex(k) => mesh.vertex_normal(tri[k as usize]),
    };
    let side = normal.dot(&(q - cp.point));
    let classification = if side > 1e-12 {
        Classification::Interior
    } else {
        Classification::Exterior
    };
    InteriorCheck {
        classification,
        nearest: cp.point,
        normal,
        distance: cp.distance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;

    #[test]
    fn sphere_cavity_center_and_outside() {
        let cav = shapes::icosphere_cavity(3, 10.0);
        let idx = SpatialIndex::build(&cav, 8).unwrap();
        assert!(interior_signed_check(&cav, &idx, &Vec3::zeros()).is_interior());
        assert!(interior_signed_check(&cav, &idx, &Vec3::new(3.0, -2.0, 4.0)).is_interior());
        assert!(!interior_signed_check(&cav, &idx, &Vec3::new(12.0, 0.0, 0.0)).is_interior());
        assert!(!interior_signed_check(&cav, &idx, &Vec3::new(0.0, -30.0, 5.0)).is_interior());
    }

    #[test]
    fn on_surface_is_exterior() {
        let cube = shapes::cube(1.0).flipped().unwrap();
        let idx = SpatialIndex::build(&cube, 4).unwrap();
        let c = interior_signed_check(&cube, &idx, &Vec3::new(1.0, 0.3, 0.3));
        assert_eq!(c.classification, Classification::Exterior);
        // vertex and edge regions
        assert!(!interior_signed_check(&cube, &idx, &Vec3::new(1.5, 1.5, 1.5)).is_interior());
        assert!(!interior_signed_check(&cube, &idx, &Vec3::new(1.5, 1.5, 0.0)).is_interior());
        assert!(interior_signed_check(&cube, &idx, &Vec3::new(0.9, 0.9, 0.9)).is_interior());
    }
}
