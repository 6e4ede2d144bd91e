//! The outer registration loop: visible contours, correspondences, outlier
//! rejection, the transform solve and the interior constraint, repeated
//! until the transform settles.

mod constraint;
mod multistart;
mod objective;
mod outliers;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::camera::CameraFrame;
use crate::correspondence::{
    balance_factor, correspond_2d, correspond_3d, total_error, visible_sets, IndexedMesh, Match2, Match3,
};
use crate::error::{Error, Result};
use crate::features::{ContourMetric, Feature3D, NoiseModel};
use crate::geometry::{rotation_angle_between, SimilarityTransform};
use crate::mesh::PreparedFeature;
use crate::render::DEFAULT_VISIBILITY_TOLERANCE;

pub use constraint::{enforce_interior, first_exterior_camera, BackupOutcome};
pub use multistart::{multistart_register, perturbed_candidates, MultistartFailure, MultistartResult, RankedRun};
pub use objective::{
    solve_transform, ContourTerm, FramePose, InnerSolverConfig, Jac3, Mat7, Objective, PointTerm, SolveOutcome, Vec7,
};
pub use outliers::{reject_outliers_2d, reject_outliers_3d, ContourRejection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// `[s_min, s_max]`; equal bounds fix the scale.
    pub scale_bounds: [f64; 2],
    pub max_outer_iterations: usize,
    /// mm
    pub translation_epsilon: f64,
    /// radians
    pub rotation_epsilon: f64,
    /// relative
    pub scale_epsilon: f64,
    pub inner: InnerSolverConfig,
    pub constraint_backup_fraction: f64,
    /// Depth slack of the contour visibility test, mm.
    pub visibility_tolerance: f64,
    /// Seeds generated multi-start candidates.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            scale_bounds: [0.5, 2.0],
            max_outer_iterations: 100,
            translation_epsilon: 1e-3,
            rotation_epsilon: 1e-4,
            scale_epsilon: 1e-4,
            inner: InnerSolverConfig::default(),
            constraint_backup_fraction: 0.5,
            visibility_tolerance: DEFAULT_VISIBILITY_TOLERANCE,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.scale_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Domain(format!("scale_bounds must satisfy 0 < s_min <= s_max, got [{lo}, {hi}]")));
        }
        for (name, v) in [
            ("translation_epsilon", self.translation_epsilon),
            ("rotation_epsilon", self.rotation_epsilon),
            ("scale_epsilon", self.scale_epsilon),
        ] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("{name} must be positive")));
            }
        }
        if !(self.constraint_backup_fraction > 0.0 && self.constraint_backup_fraction < 1.0) {
            return Err(Error::Domain("constraint_backup_fraction must lie in (0,1)".into()));
        }
        if !(self.visibility_tolerance >= 0.0) {
            return Err(Error::Domain("visibility_tolerance must be nonnegative".into()));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::Domain("max_outer_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// What happened in one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Transform the correspondences were computed at.
    pub transform: SimilarityTransform,
    /// Total match error of the inliers at `transform`.
    pub total_error: f64,
    pub inliers_3d: usize,
    pub inliers_2d: usize,
    /// Mean squared residual of the trimmed 3D inliers, mm².
    pub sigma2_match: f64,
    /// Mean pixel distance of the inlier contour matches.
    pub mean_contour_error_px: Option<f64>,
    pub solver_steps: usize,
    /// Fraction of the solver update kept by the interior constraint.
    pub backup_factor: f64,
    /// All camera centers are interior at the transform this iteration ends with.
    pub cameras_interior: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationState {
    pub transform: SimilarityTransform,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub termination: Option<Termination>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transform: SimilarityTransform,
    pub converged: bool,
    /// Mean 3D residual of the inliers at the final transform, mm.
    pub mean_residual_3d: Option<f64>,
    /// Mean pixel distance over every contour point that found a match.
    pub mean_contour_error_all: Option<f64>,
    pub mean_contour_error_inliers: Option<f64>,
    pub inliers_3d: usize,
    pub inliers_2d: usize,
    /// Features flagged as 3D outliers at the final transform, ascending.
    pub outliers_3d: Vec<usize>,
    pub total_error: f64,
    pub state: RegistrationState,
}

/// A run that stopped early, with the state it had reached.
#[derive(Debug)]
pub struct RegistrationFailure {
    pub error: Error,
    pub state: RegistrationState,
}

impl fmt::Display for RegistrationFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "registration aborted after {} iterations: {}", self.state.iterations, self.error)
    }
}

impl std::error::Error for RegistrationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Everything a registration run needs besides the starting transform.
#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub features: &'a [Feature3D],
    pub frames: &'a [CameraFrame],
    pub mesh: &'a IndexedMesh,
    pub noise: &'a NoiseModel,
    pub config: &'a SolverConfig,
}

/// Matches and rejection results at one transform.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub matches3: Vec<Match3>,
    pub matches2: Vec<Match2>,
    pub sigma2_match: f64,
    pub contour_rejection: ContourRejection,
}

impl Evaluation {
    pub fn inliers_3d(&self) -> usize {
        self.matches3.iter().filter(|m| m.inlier).count()
    }

    /// 3D inlier flag per feature.
    pub fn inlier_flags_3d(&self) -> Vec<bool> {
        let mut flags = vec![false; self.matches3.len()];
        for m in &self.matches3 {
            flags[m.feature] = m.inlier;
        }
        flags
    }

    pub fn inliers_2d(&self) -> usize {
        self.matches2.iter().filter(|m| m.inlier).count()
    }

    pub fn mean_residual_3d(&self) -> Option<f64> {
        mean(self.matches3.iter().filter(|m| m.inlier).map(|m| m.error.residual.norm()))
    }

    pub fn mean_contour_error(&self, frames: &[CameraFrame], inliers_only: bool) -> Option<f64> {
        mean(
            self.matches2
                .iter()
                .filter(|m| m.candidate.is_some() && (m.inlier || !inliers_only))
                .map(|m| m.pixel_error(&frames[m.frame].contours[m.contour])),
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Per-run constants derived once from the problem.
struct Prepared {
    features: Vec<PreparedFeature>,
    metric: ContourMetric,
    balance: f64,
    has_contours: bool,
}

impl<'a> Problem<'a> {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.config.validate()?;
        for (i, f) in self.frames.iter().enumerate() {
            f.intrinsics.validate()?;
            if let Some(c) = f.contours.iter().find(|c| c.frame_id != f.id) {
                return Err(Error::Domain(format!(
                    "frame {i} (id {}) holds a contour point tagged with frame {}",
                    f.id, c.frame_id
                )));
            }
        }
        if self.features.is_empty() && self.frames.iter().all(|f| f.contours.is_empty()) {
            return Err(Error::EmptyInput("no 3D features and no contour points"));
        }
        Ok(())
    }

    fn prepare(&self) -> Result<Prepared> {
        let features = self
            .features
            .iter()
            .map(PreparedFeature::new)
            .collect::<Result<Vec<_>>>()?;
        let n2d: usize = self.frames.iter().map(|f| f.contours.len()).sum();
        Ok(Prepared {
            features,
            metric: self.noise.contour_metric()?,
            balance: balance_factor(self.features.len(), n2d, self.noise.trim_ratio_3d),
            has_contours: n2d > 0,
        })
    }

    /// Balance factor applied to the 3D covariances.
    pub fn balance(&self) -> f64 {
        let n2d: usize = self.frames.iter().map(|f| f.contours.len()).sum();
        balance_factor(self.features.len(), n2d, self.noise.trim_ratio_3d)
    }

    fn evaluate_prepared(
        &self,
        prep: &Prepared,
        t: &SimilarityTransform,
        trim_ratio: f64,
        prior: Option<&[bool]>,
    ) -> Result<Evaluation> {
        let mut matches3 = correspond_3d(&prep.features, self.mesh, t);
        let mut matches2 = if prep.has_contours {
            let vis = visible_sets(&self.mesh.mesh, self.frames, t, self.config.visibility_tolerance)?;
            correspond_2d(self.frames, &vis, &prep.metric, self.noise.orientation_gate)
        } else {
            Vec::new()
        };
        let sigma2_match = reject_outliers_3d(&mut matches3, self.features, t, self.noise, trim_ratio, prior)?;
        let contour_rejection = reject_outliers_2d(&mut matches2, self.frames, self.noise)?;
        Ok(Evaluation {
            matches3,
            matches2,
            sigma2_match,
            contour_rejection,
        })
    }

    /// Correspondences and outlier flags at `t`, using the trim ratio of
    /// outer iteration `iteration`. `prior` holds the previous pass's 3D
    /// inlier flags per feature.
    pub fn evaluate(&self, t: &SimilarityTransform, iteration: usize, prior: Option<&[bool]>) -> Result<Evaluation> {
        let prep = self.prepare()?;
        self.evaluate_prepared(&prep, t, self.noise.trim_ratio_at(iteration), prior)
    }

    /// Frozen objective for an evaluation.
    pub fn objective(&self, eval: &Evaluation) -> Result<Objective> {
        let prep = self.prepare()?;
        Ok(Objective::new(
            &prep.features,
            &eval.matches3,
            self.frames,
            &eval.matches2,
            prep.metric,
            prep.balance,
        ))
    }
}

/// Runs the outer loop from `t_init`.
pub fn register(problem: &Problem, t_init: &SimilarityTransform) -> std::result::Result<RegistrationResult, RegistrationFailure> {
    let mut state = RegistrationState {
        transform: *t_init,
        iterations: 0,
        history: Vec::new(),
        termination: None,
    };
    macro_rules! fail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(RegistrationFailure { error, state }),
            }
        };
    }
    fail!(problem.validate());
    fail!(t_init.validate());
    let prep = fail!(problem.prepare());
    let config = problem.config;
    let [s_lo, s_hi] = config.scale_bounds;
    if t_init.scale < s_lo || t_init.scale > s_hi {
        fail!(Err(Error::Domain(format!(
            "initial scale {} lies outside the scale bounds [{s_lo}, {s_hi}]",
            t_init.scale
        ))));
    }
    if let Some(frame) = first_exterior_camera(problem.frames, problem.mesh, t_init) {
        fail!(Err(Error::InfeasibleInit { frame }));
    }

    let mut t = *t_init;
    let mut prior: Option<Vec<bool>> = None;
    for k in 0..config.max_outer_iterations {
        let eval = fail!(problem.evaluate_prepared(&prep, &t, problem.noise.trim_ratio_at(k), prior.as_deref()));
        prior = Some(eval.inlier_flags_3d());
        let objective = Objective::new(
            &prep.features,
            &eval.matches3,
            problem.frames,
            &eval.matches2,
            prep.metric,
            prep.balance,
        );
        if objective.is_empty() {
            fail!(Err(Error::DegenerateGeometry("no inlier matches left to register".into())));
        }
        let solved = fail!(solve_transform(&objective, &t, config.scale_bounds, &config.inner));
        let backup = fail!(enforce_interior(
            problem.frames,
            problem.mesh,
            &t,
            &solved.transform,
            config.constraint_backup_fraction
        ));
        let next = backup.transform;
        state.history.push(IterationRecord {
            iteration: k,
            transform: t,
            total_error: total_error(&eval.matches3, &eval.matches2, prep.balance),
            inliers_3d: eval.inliers_3d(),
            inliers_2d: eval.inliers_2d(),
            sigma2_match: eval.sigma2_match,
            mean_contour_error_px: eval.mean_contour_error(problem.frames, true),
            solver_steps: solved.steps,
            backup_factor: backup.factor,
            cameras_interior: first_exterior_camera(problem.frames, problem.mesh, &next).is_none(),
        });
        if let Some(rec) = state.history.last() {
            log::debug!(
                "iteration {k}: error {:.6} inliers {}/{} sigma2 {:.4} steps {} backup {}",
                rec.total_error,
                rec.inliers_3d,
                rec.inliers_2d,
                rec.sigma2_match,
                rec.solver_steps,
                rec.backup_factor
            );
        }
        state.iterations = k + 1;
        let settled = (next.translation - t.translation).norm() < config.translation_epsilon
            && rotation_angle_between(&next.rotation, &t.rotation) < config.rotation_epsilon
            && (next.scale / t.scale - 1.0).abs() < config.scale_epsilon;
        t = next;
        state.transform = t;
        if settled {
            state.termination = Some(Termination::Converged);
            break;
        }
    }
    if state.termination.is_none() {
        state.termination = Some(Termination::MaxIterations);
    }

    let final_trim = problem.noise.trim_ratio_at(state.iterations);
    let eval = fail!(problem.evaluate_prepared(&prep, &t, final_trim, prior.as_deref()));
    Ok(RegistrationResult {
        transform: t,
        converged: state.termination == Some(Termination::Converged),
        mean_residual_3d: eval.mean_residual_3d(),
        mean_contour_error_all: eval.mean_contour_error(problem.frames, false),
        mean_contour_error_inliers: eval.mean_contour_error(problem.frames, true),
        inliers_3d: eval.inliers_3d(),
        inliers_2d: eval.inliers_2d(),
        outliers_3d: (0..eval.matches3.len()).filter(|&i| !eval.matches3[i].inlier).map(|i| eval.matches3[i].feature).collect(),
        total_error: total_error(&eval.matches3, &eval.matches2, prep.balance),
        state,
    })
}
