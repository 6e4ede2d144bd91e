//! Independent runs from several starting poses, ranked by inlier contour error.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{register, Problem, RegistrationFailure, RegistrationResult};
use crate::geometry::{exp_so3, SimilarityTransform, Vec3};

#[derive(Debug)]
pub struct RankedRun {
    pub candidate: usize,
    pub outcome: Result<RegistrationResult, RegistrationFailure>,
}

impl RankedRun {
    /// Inlier mean contour error; `None` for failures and runs without
    /// contour inliers.
    pub fn score(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(|r| r.mean_contour_error_inliers)
    }
}

#[derive(Debug)]
pub struct MultistartResult {
    /// Best run first. Successful runs are ordered by inlier contour error
    /// (runs without a contour error after those), failures last; ties keep
    /// candidate order.
    pub ranking: Vec<RankedRun>,
}

impl MultistartResult {
    pub fn best(&self) -> &RegistrationResult {
        match &self.ranking[0].outcome {
            Ok(r) => r,
            Err(_) => unreachable!("a multistart result holds at least one success"),
        }
    }

    pub fn best_candidate(&self) -> usize {
        self.ranking[0].candidate
    }
}

/// Every candidate failed.
#[derive(Debug)]
pub struct MultistartFailure {
    pub failures: Vec<RankedRun>,
}

impl fmt::Display for MultistartFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "all {} candidates failed", self.failures.len())?;
        for run in &self.failures {
            if let Err(e) = &run.outcome {
                write!(f, "; candidate {}: {}", run.candidate, e.error)?;
            }
        }
        Ok(())
    }
}

impl std::error::Error for MultistartFailure {}

/// Runs `register` from each candidate in parallel and ranks the results.
pub fn multistart_register(
    problem: &Problem,
    candidates: &[SimilarityTransform],
) -> Result<MultistartResult, MultistartFailure> {
    let mut runs: Vec<RankedRun> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, t)| RankedRun {
            candidate: i,
            outcome: register(problem, t),
        })
        .collect();
    if runs.iter().all(|r| r.outcome.is_err()) {
        return Err(MultistartFailure { failures: runs });
    }
    let class = |r: &RankedRun| match (&r.outcome, r.score()) {
        (Ok(_), Some(_)) => 0,
        (Ok(_), None) => 1,
        (Err(_), _) => 2,
    };
    runs.sort_by(|a, b| {
        class(a)
            .cmp(&class(b))
            .then_with(|| match (a.score(), b.score()) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => std::cmp::Ordering::Equal,
            })
            .then(a.candidate.cmp(&b.candidate))
    });
    Ok(MultistartResult { ranking: runs })
}

/// `base` followed by `count − 1` poses offset from it by a rotation of
/// `rotation_deg` about a random axis through `pivot` and a translation of
/// `translation_mm` in a random direction.
pub fn perturbed_candidates(
    base: &SimilarityTransform,
    count: usize,
    translation_mm: f64,
    rotation_deg: f64,
    pivot: &Vec3,
    seed: u64,
) -> Vec<SimilarityTransform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    out.push(*base);
    for _ in 1..count {
        let axis = random_unit(&mut rng);
        let dir = random_unit(&mut rng);
        out.push(offset_about(base, &(axis * rotation_deg.to_radians()), &(dir * translation_mm), pivot));
    }
    out
}

/// Applies a rigid offset `x ↦ exp(ω)(x − p) + p + τ` after `base`.
pub(crate) fn offset_about(base: &SimilarityTransform, omega: &Vec3, tau: &Vec3, pivot: &Vec3) -> SimilarityTransform {
    let r = exp_so3(omega);
    let offset = SimilarityTransform::rigid(r, pivot - r * pivot + tau);
    offset.compose(base)
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}
