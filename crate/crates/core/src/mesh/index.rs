use crate::error::{Error, Result};
use crate::features::{inverse_cholesky3, Feature3D, MatchError3};
use crate::geometry::{Mat3, SimilarityTransform, Vec3};

use super::TriangleMesh;

/// Region of a triangle that holds the closest point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriangleFeature {
    Face,
    /// Edge `k` joins local vertices `k` and `(k + 1) % 3`.
    Edge(u8),
    Vertex(u8),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClosestPoint {
    pub point: Vec3,
    pub face: usize,
    pub distance: f64,
    pub feature: TriangleFeature,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MostLikelyPoint {
    pub point: Vec3,
    pub face: usize,
    pub error: MatchError3,
}

/// Closest point on triangle `abc` to `p`, with barycentric weights
/// `(wa, wb, wc)` and the region it falls in.
pub fn closest_point_on_triangle(
    p: &Vec3,
    a: &Vec3,
    b: &Vec3,
    c: &Vec3,
) -> (Vec3, [f64; 3], TriangleFeature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0], TriangleFeature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0], TriangleFeature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0], TriangleFeature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0], TriangleFeature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w], TriangleFeature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w], TriangleFeature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w], TriangleFeature::Face)
}

#[derive(Clone, Copy, Debug)]
enum NodeKind {
    Leaf { start: u32, count: u32 },
    Inner { left: u32, right: u32 },
}

#[derive(Clone, Copy, Debug)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    kind: NodeKind,
}

impl Node {
    #[inline]
    fn distance_squared(&self, p: &Vec3) -> f64 {
        let d = (self.lo - p).sup(&Vec3::zeros()).sup(&(p - self.hi));
        d.norm_squared()
    }
}

/// Bounding-volume hierarchy over a mesh's triangles (median split on the
/// longest centroid axis).
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    order: Vec<usize>,
    leaf_size: usize,
}

/// How a query scores candidate triangles.
enum Metric {
    Euclidean,
    /// Cost `½‖W(y − z)‖²`; `bound` converts squared Euclidean distance into a lower bound.
    Whitened { w: Mat3, bound: f64 },
}

impl SpatialIndex {
    pub fn build(mesh: &TriangleMesh, leaf_size: usize) -> Result<Self> {
        if leaf_size == 0 {
            return Err(Error::Domain("leaf size must be positive".into()));
        }
        let n = mesh.face_count();
        if n == 0 {
            return Err(Error::EmptyInput("cannot index an empty mesh"));
        }
        let bounds: Vec<(Vec3, Vec3)> = (0..n)
            .map(|f| {
                let [a, b, c] = mesh.face_vertices(f);
                (a.inf(&b).inf(&c), a.sup(&b).sup(&c))
            })
            .collect();
        let centroids: Vec<Vec3> = (0..n).map(|f| mesh.face_center(f)).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::with_capacity(2 * n / leaf_size + 1);
        build_node(&mut nodes, &mut order, 0, n, leaf_size, &bounds, &centroids);
        Ok(Self {
            nodes,
            order,
            leaf_size,
        })
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Triangle ids grouped per leaf.
    pub fn leaves(&self) -> Vec<&[usize]> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { start, count } => {
                    Some(&self.order[start as usize..(start + count) as usize])
                }
                NodeKind::Inner { .. } => None,
            })
            .collect()
    }

    /// Bounds of each leaf.
    pub fn leaf_bounds(&self) -> Vec<(Vec3, Vec3)> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .map(|n| (n.lo, n.hi))
            .collect()
    }

    pub fn closest_point(&self, mesh: &TriangleMesh, q: &Vec3) -> ClosestPoint {
        let (face, cost, hit) = self.search(mesh, q, &Metric::Euclidean);
        ClosestPoint {
            point: hit.0,
            face,
            distance: cost.sqrt(),
            feature: hit.1,
        }
    }

    /// Exhaustive scan; the reference the accelerated query must reproduce.
    pub fn brute_force_closest_point(mesh: &TriangleMesh, q: &Vec3) -> ClosestPoint {
        let (face, cost, hit) = brute_force(mesh, q, &Metric::Euclidean);
        ClosestPoint {
            point: hit.0,
            face,
            distance: cost.sqrt(),
            feature: hit.1,
        }
    }

    /// Model point minimizing the 3D match error of `x` under `t`.
    pub fn most_likely_point(
        &self,
        mesh: &TriangleMesh,
        x: &Feature3D,
        t: &SimilarityTransform,
    ) -> Result<MostLikelyPoint> {
        let prepared = PreparedFeature::new(x)?;
        Ok(self.most_likely_point_prepared(mesh, &prepared, t))
    }

    pub fn most_likely_point_prepared(
        &self,
        mesh: &TriangleMesh,
        x: &PreparedFeature,
        t: &SimilarityTransform,
    ) -> MostLikelyPoint {
        let z = t.apply(&x.position);
        match x.isotropic_variance {
            Some(var) => {
                let cp = self.closest_point(mesh, &z);
                MostLikelyPoint {
                    point: cp.point,
                    face: cp.face,
                    error: MatchError3 {
                        value: 0.5 * cp.distance * cp.distance / var,
                        residual: cp.point - z,
                    },
                }
            }
            None => {
                let metric = Metric::Whitened {
                    w: x.l_inv * t.rotation.transpose(),
                    bound: 0.5 / x.lambda_max,
                };
                let (face, cost, hit) = self.search(mesh, &z, &metric);
                MostLikelyPoint {
                    point: hit.0,
                    face,
                    error: MatchError3 {
                        value: cost,
                        residual: hit.0 - z,
                    },
                }
            }
        }
    }

    pub fn brute_force_most_likely_point(
        mesh: &TriangleMesh,
        x: &Feature3D,
        t: &SimilarityTransform,
    ) -> Result<MostLikelyPoint> {
        let p = PreparedFeature::new(x)?;
        let z = t.apply(&p.position);
        let metric = match p.isotropic_variance {
            Some(_) => Metric::Euclidean,
            None => Metric::Whitened {
                w: p.l_inv * t.rotation.transpose(),
                bound: 0.5 / p.lambda_max,
            },
        };
        let (face, cost, hit) = brute_force(mesh, &z, &metric);
        let value = match p.isotropic_variance {
            Some(var) => 0.5 * cost / var,
            None => cost,
        };
        Ok(MostLikelyPoint {
            point: hit.0,
            face,
            error: MatchError3 {
                value,
                residual: hit.0 - z,
            },
        })
    }

    fn search(&self, mesh: &TriangleMesh, z: &Vec3, metric: &Metric) -> (usize, f64, (Vec3, TriangleFeature)) {
        let (zw, bound) = match metric {
            Metric::Euclidean => (*z, 1.0),
            Metric::Whitened { w, bound } => (w * z, *bound),
        };
        let mut best = (usize::MAX, f64::INFINITY, (Vec3::zeros(), TriangleFeature::Face));
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni as usize];
            if bound * node.distance_squared(z) > best.1 {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, count } => {
                    for &f in &self.order[start as usize..(start + count) as usize] {
                        let (cost, hit) = evaluate(mesh, f, z, &zw, metric);
                        if cost < best.1 || (cost == best.1 && f < best.0) {
                            best = (f, cost, hit);
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left as usize].distance_squared(z);
                    let dr = self.nodes[right as usize].distance_squared(z);
                    // nearer child on top of the stack
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        best
    }
}

fn brute_force(mesh: &TriangleMesh, z: &Vec3, metric: &Metric) -> (usize, f64, (Vec3, TriangleFeature)) {
    let zw = match metric {
        Metric::Euclidean => *z,
        Metric::Whitened { w, .. } => w * z,
    };
    let mut best = (usize::MAX, f64::INFINITY, (Vec3::zeros(), TriangleFeature::Face));
    for f in 0..mesh.face_count() {
        let (cost, hit) = evaluate(mesh, f, z, &zw, metric);
        if cost < best.1 {
            best = (f, cost, hit);
        }
    }
    best
}

/// Cost of face `f` and its minimizing point in model coordinates.
#[inline]
fn evaluate(mesh: &TriangleMesh, f: usize, z: &Vec3, zw: &Vec3, metric: &Metric) -> (f64, (Vec3, TriangleFeature)) {
    let [a, b, c] = mesh.face_vertices(f);
    match metric {
        Metric::Euclidean => {
            let (p, _, feat) = closest_point_on_triangle(z, &a, &b, &c);
            ((p - z).norm_squared(), (p, feat))
        }
        Metric::Whitened { w, .. } => {
            let (pw, bary, feat) = closest_point_on_triangle(zw, &(w * a), &(w * b), &(w * c));
            let y = a * bary[0] + b * bary[1] + c * bary[2];
            (0.5 * (pw - zw).norm_squared(), (y, feat))
        }
    }
}

/// A feature with its covariance factorization cached.
#[derive(Clone, Copy, Debug)]
pub struct PreparedFeature {
    pub position: Vec3,
    pub l_inv: Mat3,
    pub lambda_max: f64,
    /// `Some(σ²)` when the covariance is exactly `σ²I`.
    pub isotropic_variance: Option<f64>,
}

impl PreparedFeature {
    pub fn new(x: &Feature3D) -> Result<Self> {
        let c = &x.covariance;
        let l_inv = inverse_cholesky3(c)?;
        let isotropic = c[(0, 0)] == c[(1, 1)]
            && c[(1, 1)] == c[(2, 2)]
            && c[(0, 1)] == 0.0
            && c[(0, 2)] == 0.0
            && c[(1, 2)] == 0.0
            && c[(1, 0)] == 0.0
            && c[(2, 0)] == 0.0
            && c[(2, 1)] == 0.0;
        Ok(Self {
            position: x.position,
            l_inv,
            lambda_max: c.symmetric_eigenvalues().max(),
            isotropic_variance: isotropic.then_some(c[(0, 0)]),
        })
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    leaf_size: usize,
    bounds: &[(Vec3, Vec3)],
    centroids: &[Vec3],
) -> u32 {
    let slice = &mut order[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let mut clo = lo;
    let mut chi = hi;
    for &f in slice.iter() {
        lo = lo.inf(&bounds[f].0);
        hi = hi.sup(&bounds[f].1);
        clo = clo.inf(&centroids[f]);
        chi = chi.sup(&centroids[f]);
    }
    let id = nodes.len() as u32;
    let count = end - start;
    let extent = chi - clo;
    if count <= leaf_size || extent.max() <= 0.0 {
        nodes.push(Node {
            lo,
            hi,
            kind: NodeKind::Leaf {
                start: start as u32,
                count: count as u32,
            },
        });
        return id;
    }
    let axis = extent.imax();
    let mid = count / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    nodes.push(Node {
        lo,
        hi,
        kind: NodeKind::Leaf { start: 0, count: 0 },
    });
    let left = build_node(nodes, order, start, start + mid, leaf_size, bounds, centroids);
    let right = build_node(nodes, order, start + mid, end, leaf_size, bounds, centroids);
    nodes[id as usize].kind = NodeKind::Inner { left, right };
    id
}
