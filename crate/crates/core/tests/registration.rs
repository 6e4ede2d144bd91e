mod common;

use rand::Rng;
use vimlop::camera::CameraFrame;
use vimlop::correspondence::IndexedMesh;
use vimlop::features::{Feature3D, NoiseModel};
use vimlop::geometry::{rotation_angle_between, SimilarityTransform, Vec3};
use vimlop::mesh::shapes::{self, CavitySpec};
use vimlop::registration::{multistart_register, register, Problem, SolverConfig};
use vimlop::synthetic::{evaluate_tre, generate_scene, SceneSpec};
use vimlop::Error;

fn surface_points(mesh: &IndexedMesh, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = common::rng(seed);
    (0..n)
        .map(|_| {
            let f = rng.random_range(0..mesh.mesh.face_count());
            let [a, b, c] = mesh.mesh.face_vertices(f);
            let (mut u, mut v): (f64, f64) = (rng.random(), rng.random());
            if u + v > 1.0 {
                (u, v) = (1.0 - u, 1.0 - v);
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}

/// Scaled ICP: closest points, closed-form similarity fit, repeat.
fn scaled_icp(mesh: &IndexedMesh, x: &[Vec3], start: SimilarityTransform) -> SimilarityTransform {
    let mut t = start;
    for _ in 0..500 {
        let y: Vec<Vec3> = x
            .iter()
            .map(|p| common::brute_closest(&mesh.mesh, &t.apply(p)).1)
            .collect();
        let (s, r, tr) = common::umeyama(x, &y);
        let next = SimilarityTransform::new(s, r, tr).unwrap();
        let moved = (next.translation - t.translation).norm()
            + rotation_angle_between(&next.rotation, &t.rotation)
            + (next.scale - t.scale).abs();
        t = next;
        if moved < 1e-12 {
            break;
        }
    }
    t
}

struct IcpCase {
    mesh: IndexedMesh,
    features: Vec<Feature3D>,
    x: Vec<Vec3>,
    noise: NoiseModel,
}

fn icp_case(seed: u64, data_scale: f64) -> IcpCase {
    let mesh = IndexedMesh::new(shapes::pseudo_sinus(&CavitySpec {
        subdivisions: 3,
        ..CavitySpec::default()
    }))
    .unwrap();
    let mut rng = common::rng(seed + 100);
    let misalignment = SimilarityTransform::new(
        data_scale,
        common::random_rotation(&mut rng, 2f64.to_radians()),
        common::unit(&mut rng) * 1.0,
    )
    .unwrap();
    let x: Vec<Vec3> = surface_points(&mesh, 300, seed)
        .into_iter()
        .map(|p| misalignment.apply(&(p + common::unit(&mut rng) * rng.random_range(0.0..0.2))))
        .collect();
    let features = x.iter().map(|p| Feature3D::isotropic(*p, 0.04).unwrap()).collect();
    let noise = NoiseModel {
        trim_ratio_3d: 0.0,
        chi2_p: 1.0 - 1e-12,
        ..NoiseModel::default()
    };
    IcpCase {
        mesh,
        features,
        x,
        noise,
    }
}

fn tight_config(scale_bounds: [f64; 2]) -> SolverConfig {
    SolverConfig {
        scale_bounds,
        max_outer_iterations: 300,
        translation_epsilon: 1e-10,
        rotation_epsilon: 1e-11,
        scale_epsilon: 1e-11,
        ..SolverConfig::default()
    }
}

#[test]
fn features_only_run_reduces_to_scaled_icp() {
    for seed in 0..3 {
        let case = icp_case(seed, 1.04);
        let config = tight_config([0.5, 2.0]);
        let problem = Problem {
            features: &case.features,
            frames: &[],
            mesh: &case.mesh,
            noise: &case.noise,
            config: &config,
        };
        let got = register(&problem, &SimilarityTransform::identity()).unwrap();
        assert!(got.converged);
        assert_eq!(got.inliers_3d, case.features.len());
        let want = scaled_icp(&case.mesh, &case.x, SimilarityTransform::identity());
        assert!((got.transform.scale - want.scale).abs() < 1e-6, "{} vs {}", got.transform.scale, want.scale);
        assert!((got.transform.rotation - want.rotation).norm() < 1e-6);
        assert!((got.transform.translation - want.translation).norm() < 1e-5);
    }
}

#[test]
fn equal_scale_bounds_fix_the_scale() {
    let case = icp_case(7, 1.04);
    let config = tight_config([1.0, 1.0]);
    let problem = Problem {
        features: &case.features,
        frames: &[],
        mesh: &case.mesh,
        noise: &case.noise,
        config: &config,
    };
    let got = register(&problem, &SimilarityTransform::identity()).unwrap();
    assert_eq!(got.transform.scale, 1.0);
    assert!(got.state.history.iter().all(|h| h.transform.scale == 1.0));
}

#[test]
fn scale_leaving_bounds_is_clamped() {
    let case = icp_case(8, 1.2);
    let config = tight_config([0.9, 1.1]);
    let problem = Problem {
        features: &case.features,
        frames: &[],
        mesh: &case.mesh,
        noise: &case.noise,
        config: &config,
    };
    let got = register(&problem, &SimilarityTransform::identity()).unwrap();
    // the data is 1.2× the model, so the recovered scale wants 1/1.2
    assert_eq!(got.transform.scale, 0.9);
}

#[test]
fn collinear_features_are_degenerate() {
    let mesh = IndexedMesh::new(shapes::cube(5.0)).unwrap();
    let features: Vec<Feature3D> = (0..20)
        .map(|i| Feature3D::isotropic(Vec3::new(i as f64 * 0.2 - 2.0, 0.0, 5.0), 0.01).unwrap())
        .collect();
    let noise = NoiseModel {
        trim_ratio_3d: 0.0,
        ..NoiseModel::default()
    };
    let config = SolverConfig::default();
    let problem = Problem {
        features: &features,
        frames: &[],
        mesh: &mesh,
        noise: &noise,
        config: &config,
    };
    let err = register(&problem, &SimilarityTransform::identity()).unwrap_err();
    assert!(matches!(err.error, Error::DegenerateGeometry(_)), "{}", err.error);
}

fn small_scene() -> (IndexedMesh, vimlop::synthetic::Scene) {
    let spec = SceneSpec {
        points: 300,
        cavity: CavitySpec {
            subdivisions: 4,
            ..CavitySpec::default()
        },
        ..SceneSpec::default()
    };
    let mesh = IndexedMesh::new(spec.build_mesh()).unwrap();
    let scene = generate_scene(&spec, &mesh).unwrap();
    (mesh, scene)
}

#[test]
fn multistart_ranks_failures_last_and_keeps_candidate_order_on_ties() {
    let (mesh, scene) = small_scene();
    let noise = NoiseModel::default();
    let config = SolverConfig {
        max_outer_iterations: 15,
        ..SolverConfig::default()
    };
    let problem = Problem {
        features: &scene.features,
        frames: &scene.frames,
        mesh: &mesh,
        noise: &noise,
        config: &config,
    };
    let start = SimilarityTransform::identity();
    let outside = SimilarityTransform::from_translation(Vec3::new(0.0, 100.0, 0.0));
    let result = multistart_register(&problem, &[outside, start, start]).unwrap();
    let order: Vec<usize> = result.ranking.iter().map(|r| r.candidate).collect();
    assert_eq!(order, vec![1, 2, 0]);
    assert_eq!(result.best_candidate(), 1);
    assert!(matches!(
        result.ranking[2].outcome.as_ref().unwrap_err().error,
        Error::InfeasibleInit { .. }
    ));
    let (a, b) = (result.ranking[0].outcome.as_ref().unwrap(), result.ranking[1].outcome.as_ref().unwrap());
    assert_eq!(a, b);
    assert!(evaluate_tre(&a.transform, &scene.ground_truth) < 1.0);

    let single = multistart_register(&problem, &[start]).unwrap();
    assert_eq!(single.ranking.len(), 1);
    assert_eq!(single.best(), a);

    let failed = multistart_register(&problem, &[outside]).unwrap_err();
    assert_eq!(failed.failures.len(), 1);
}

#[test]
fn contour_only_run_is_accepted() {
    let (mesh, scene) = small_scene();
    let noise = NoiseModel::default();
    let config = SolverConfig {
        max_outer_iterations: 5,
        scale_bounds: [1.0, 1.0],
        ..SolverConfig::default()
    };
    let frames: Vec<CameraFrame> = scene.frames.clone();
    let problem = Problem {
        features: &[],
        frames: &frames,
        mesh: &mesh,
        noise: &noise,
        config: &config,
    };
    let got = register(&problem, &SimilarityTransform::identity()).unwrap();
    assert_eq!(got.inliers_3d, 0);
    assert!(got.inliers_2d > 0);
    assert!(got.mean_residual_3d.is_none());
}
