//! Machine-readable outputs: the JSON report and plot-ready CSV tables.

use serde::{Deserialize, Serialize};
use vimlop::geometry::SimilarityTransform;
use vimlop::registration::{IterationRecord, MultistartResult, RegistrationResult, Termination};
use vimlop::synthetic::SweepRow;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingEntry {
    /// 1-based; 1 is the reported result.
    pub rank: usize,
    pub candidate: usize,
    pub initial: SimilarityTransform,
    pub converged: bool,
    pub contour_error_px: Option<f64>,
    pub tre_mm: Option<f64>,
    pub error: Option<String>,
}

/// Result of one `register` invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    /// Cloud-to-model similarity transform.
    pub transform: SimilarityTransform,
    pub converged: bool,
    pub termination: Option<Termination>,
    pub iterations: usize,
    pub total_error: f64,
    pub mean_residual_3d_mm: Option<f64>,
    pub mean_contour_error_px: Option<f64>,
    pub mean_contour_error_inliers_px: Option<f64>,
    pub features: usize,
    pub inliers_3d: usize,
    pub outliers_3d: Vec<usize>,
    pub contour_points: usize,
    pub inliers_2d: usize,
    /// Present when ground truth was supplied.
    pub tre_mm: Option<f64>,
    pub best_candidate: usize,
    pub ranking: Vec<RankingEntry>,
    pub history: Vec<IterationRecord>,
}

impl Report {
    pub fn new(
        ms: &MultistartResult,
        candidates: &[SimilarityTransform],
        features: usize,
        contour_points: usize,
        tre: impl Fn(&SimilarityTransform) -> Option<f64>,
    ) -> Self {
        let best: &RegistrationResult = ms.best();
        let ranking = ms
            .ranking
            .iter()
            .enumerate()
            .map(|(i, run)| {
                let (converged, error, final_t) = match &run.outcome {
                    Ok(r) => (r.converged, None, r.transform),
                    Err(f) => (false, Some(f.error.to_string()), f.state.transform),
                };
                RankingEntry {
                    rank: i + 1,
                    candidate: run.candidate,
                    initial: candidates[run.candidate],
                    converged,
                    contour_error_px: run.score(),
                    tre_mm: tre(&final_t),
                    error,
                }
            })
            .collect();
        Self {
            transform: best.transform,
            converged: best.converged,
            termination: best.state.termination,
            iterations: best.state.iterations,
            total_error: best.total_error,
            mean_residual_3d_mm: best.mean_residual_3d,
            mean_contour_error_px: best.mean_contour_error_all,
            mean_contour_error_inliers_px: best.mean_contour_error_inliers,
            features,
            inliers_3d: best.inliers_3d,
            outliers_3d: best.outliers_3d.clone(),
            contour_points,
            inliers_2d: best.inliers_2d,
            tre_mm: tre(&best.transform),
            best_candidate: ms.best_candidate(),
            ranking,
            history: best.state.history.clone(),
        }
    }
}

#[derive(Serialize)]
struct HistoryRow {
    iteration: usize,
    total_error: f64,
    inliers_3d: usize,
    inliers_2d: usize,
    sigma2_match: f64,
    mean_contour_error_px: Option<f64>,
    solver_steps: usize,
    backup_factor: f64,
    cameras_interior: bool,
    scale: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv output is utf-8")
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    to_csv(history.iter().map(|h| {
        let t = &h.transform;
        let [qw, qx, qy, qz] = t.quaternion_wxyz();
        HistoryRow {
            iteration: h.iteration,
            total_error: h.total_error,
            inliers_3d: h.inliers_3d,
            inliers_2d: h.inliers_2d,
            sigma2_match: h.sigma2_match,
            mean_contour_error_px: h.mean_contour_error_px,
            solver_steps: h.solver_steps,
            backup_factor: h.backup_factor,
            cameras_interior: h.cameras_interior,
            scale: t.scale,
            tx: t.translation.x,
            ty: t.translation.y,
            tz: t.translation.z,
            qw,
            qx,
            qy,
            qz,
        }
    }))
}

#[derive(Serialize)]
struct RankingRow<'a> {
    rank: usize,
    candidate: usize,
    best: bool,
    converged: bool,
    contour_error_px: Option<f64>,
    tre_mm: Option<f64>,
    error: Option<&'a str>,
}

pub fn ranking_csv(ranking: &[RankingEntry]) -> String {
    to_csv(ranking.iter().map(|r| RankingRow {
        rank: r.rank,
        candidate: r.candidate,
        best: r.rank == 1,
        converged: r.converged,
        contour_error_px: r.contour_error_px,
        tre_mm: r.tre_mm,
        error: r.error.as_deref(),
    }))
}

/// Fixed-width table with the reported (best) run marked by `*`.
pub fn ranking_table(ranking: &[RankingEntry]) -> String {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    let mut out = format!("{:<6}{:>10}{:>12}{:>14}{:>10}\n", "rank", "candidate", "converged", "contour_px", "tre_mm");
    for r in ranking {
        let mark = if r.rank == 1 { "*" } else { "" };
        let status = match (&r.error, r.converged) {
            (Some(_), _) => "failed",
            (None, true) => "yes",
            (None, false) => "no",
        };
        out.push_str(&format!(
            "{:<6}{:>10}{:>12}{:>14}{:>10}\n",
            format!("{}{mark}", r.rank),
            r.candidate,
            status,
            fmt(r.contour_error_px),
            fmt(r.tre_mm)
        ));
    }
    out
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    to_csv(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct OverlayRow {
    pub frame: usize,
    pub video_points: usize,
    pub model_samples: usize,
    pub mean_distance_px: Option<f64>,
}

pub fn overlay_csv(rows: &[OverlayRow]) -> String {
    to_csv(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vimlop::registration::{RegistrationResult, RegistrationState};

    fn result() -> RegistrationResult {
        RegistrationResult {
            transform: SimilarityTransform::identity(),
            converged: true,
            mean_residual_3d: Some(0.25),
            mean_contour_error_all: None,
            mean_contour_error_inliers: Some(1.5),
            inliers_3d: 3,
            inliers_2d: 0,
            outliers_3d: vec![1],
            total_error: 2.0,
            state: RegistrationState {
                transform: SimilarityTransform::identity(),
                iterations: 1,
                history: vec![],
                termination: Some(Termination::Converged),
            },
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let ms = MultistartResult {
            ranking: vec![vimlop::registration::RankedRun {
                candidate: 0,
                outcome: Ok(result()),
            }],
        };
        let report = Report::new(&ms, &[SimilarityTransform::identity()], 4, 0, |_| Some(0.1));
        let text = vimlop::formats::to_json(&report);
        assert_eq!(serde_json::from_str::<Report>(&text).unwrap(), report);
        assert!(serde_json::from_str::<Report>(&text.replacen("\"converged\"", "\"convergd\"", 1)).is_err());
        let table = ranking_table(&report.ranking);
        assert!(table.lines().nth(1).unwrap().starts_with("1*"));
        assert_eq!(ranking_csv(&report.ranking).lines().count(), 2);
    }
}
