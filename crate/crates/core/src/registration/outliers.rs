//! Trimming and chi-square outlier rejection between the correspondence and
//! registration phases.

use crate::camera::CameraFrame;
use crate::correspondence::{Match2, Match3};
use crate::error::{Error, Result};
use crate::features::{Feature3D, NoiseModel};
use crate::geometry::{Mat2, Mat3, SimilarityTransform};
use crate::stats::{chi2_inv, normal_two_sided_quantile, von_mises_sigma};

/// Flags out the `⌈ratio·n⌉` matches with the highest error (ties: higher
/// index first), then every remaining match whose residual fails
/// `rᵀR(Σ + σ²I)⁻¹Rᵀr ≤ χ²₃(p)`. σ² is the mean squared residual of the
/// current inliers: matches that survived trimming and, when `prior` is
/// given, were inliers of the previous pass. Returns that σ².
///
/// Matches arrive with all flags set; callers reset them each iteration.
pub fn reject_outliers_3d(
    matches: &mut [Match3],
    features: &[Feature3D],
    t: &SimilarityTransform,
    noise: &NoiseModel,
    trim_ratio: f64,
    prior: Option<&[bool]>,
) -> Result<f64> {
    let n = matches.len();
    if n == 0 {
        return Ok(0.0);
    }
    let trim = ((trim_ratio * n as f64).ceil() as usize).min(n);
    if trim > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            matches[b]
                .error
                .value
                .total_cmp(&matches[a].error.value)
                .then(b.cmp(&a))
        });
        for &i in &order[..trim] {
            matches[i].inlier = false;
        }
    }
    let kept: Vec<usize> = (0..n).filter(|&i| matches[i].inlier).collect();
    if kept.is_empty() {
        return Err(Error::EmptyInliers);
    }
    let current: Vec<usize> = match prior {
        Some(p) => kept.iter().copied().filter(|&i| p.get(matches[i].feature).copied().unwrap_or(true)).collect(),
        None => Vec::new(),
    };
    let basis = if current.is_empty() { &kept } else { &current };
    let sigma2 = basis
        .iter()
        .map(|&i| matches[i].error.residual.norm_squared())
        .sum::<f64>()
        / basis.len() as f64;

    let threshold = chi2_inv(noise.chi2_p, 3)?;
    for &i in &kept {
        let m = &mut matches[i];
        let cov = features[m.feature].covariance + Mat3::identity() * sigma2;
        let u = t.rotation.transpose() * m.error.residual;
        let stat = match cov.cholesky() {
            Some(c) => u.dot(&c.solve(&u)),
            None => return Err(Error::InvalidCovariance(format!("feature {}", m.feature))),
        };
        if !(stat <= threshold) {
            m.inlier = false;
        }
    }
    if !matches.iter().any(|m| m.inlier) {
        return Err(Error::EmptyInliers);
    }
    Ok(sigma2)
}

/// Summary of one 2D rejection pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourRejection {
    /// Mean squared pixel residual of the matched points before rejection.
    pub sigma2: f64,
    pub rejected: usize,
    /// Frames where the per-frame cap limited the rejections.
    pub capped_frames: usize,
}

/// Independent position and orientation chi-square tests on the matched
/// contour points, capped per frame at `⌊cap·n_frame⌋` rejections. When the
/// cap binds, the worst points by `max(position stat / threshold, angle /
/// threshold)` go first (ties: higher index first).
pub fn reject_outliers_2d(
    matches: &mut [Match2],
    frames: &[CameraFrame],
    noise: &NoiseModel,
) -> Result<ContourRejection> {
    let pos_thr = chi2_inv(noise.chi2_p, 2)?;
    let ang_thr = normal_two_sided_quantile(noise.chi2_p)? * von_mises_sigma(noise.kappa)?;

    let matched: Vec<usize> = (0..matches.len())
        .filter(|&i| matches[i].inlier && matches[i].candidate.is_some())
        .collect();
    if matched.is_empty() {
        return Ok(ContourRejection {
            sigma2: 0.0,
            rejected: 0,
            capped_frames: 0,
        });
    }
    let residual = |m: &Match2| m.position - frames[m.frame].contours[m.contour].position;
    let sigma2 = matched
        .iter()
        .map(|&i| residual(&matches[i]).norm_squared())
        .sum::<f64>()
        / matched.len() as f64;
    let cov = noise.sigma2d + Mat2::identity() * sigma2;
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::InvalidCovariance("sigma2d".into()))?;

    // (index, score) of failing matches, per frame
    let mut failing: Vec<Vec<(usize, f64)>> = vec![Vec::new(); frames.len()];
    for &i in &matched {
        let m = &matches[i];
        let d = residual(m);
        let pos = d.dot(&chol.solve(&d));
        let x = &frames[m.frame].contours[m.contour].normal;
        let angle = m.normal.dot(x).clamp(-1.0, 1.0).acos();
        if !(pos <= pos_thr) || !(angle <= ang_thr) {
            failing[m.frame].push((i, (pos / pos_thr).max(angle / ang_thr)));
        }
    }

    let mut rejected = 0;
    let mut capped_frames = 0;
    for (f, mut fail) in failing.into_iter().enumerate() {
        let limit = (noise.contour_outlier_cap * frames[f].contours.len() as f64).floor() as usize;
        if fail.len() > limit {
            capped_frames += 1;
            fail.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
            fail.truncate(limit);
        }
        for (i, _) in fail {
            matches[i].inlier = false;
            rejected += 1;
        }
    }
    Ok(ContourRejection {
        sigma2,
        rejected,
        capped_frames,
    })
}
