//! Run configuration: built-in defaults, then an optional JSON file, then
//! command-line flags.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use vimlop::features::NoiseModel;
use vimlop::formats::read_text;
use vimlop::geometry::{Mat2, Mat3};
use vimlop::registration::SolverConfig;
use vimlop::synthetic::SceneSpec;

/// Offsets of the default sweep: `(2i mm, 2i°)` for `i = 0..10`.
pub fn default_offsets() -> Vec<[f64; 2]> {
    (0..10).map(|i| [2.0 * i as f64, 2.0 * i as f64]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// `[mm, degrees]` per row.
    pub offsets: Vec<[f64; 2]>,
    /// Frame used for the reprojection error; the middle frame when absent.
    pub frame: Option<usize>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            offsets: default_offsets(),
            frame: None,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultistartConfig {
    /// Generated candidates per supplied starting pose, the pose included.
    pub count: usize,
    pub translation_mm: f64,
    pub rotation_deg: f64,
}

impl Default for MultistartConfig {
    fn default() -> Self {
        Self {
            count: 1,
            translation_mm: 2.0,
            rotation_deg: 2.0,
        }
    }
}

/// Everything tunable, as read from `--config`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub noise: NoiseModel,
    pub solver: SolverConfig,
    pub scene: SceneSpec,
    pub sweep: SweepConfig,
    pub multistart: MultistartConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> vimlop::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => Self::from_json(&read_text(p)?, &p.display().to_string()),
        }
    }

    pub fn from_json(text: &str, context: &str) -> vimlop::Result<Self> {
        serde_json::from_str(text).map_err(|source| vimlop::Error::Json {
            context: context.to_string(),
            source,
        })
    }

    pub fn validate(&self) -> vimlop::Result<()> {
        self.noise.validate()?;
        self.solver.validate()?;
        self.scene.validate()?;
        if self.multistart.count == 0 {
            return Err(vimlop::Error::Domain("multistart.count must be positive".into()));
        }
        Ok(())
    }
}

/// Comma-separated list of exactly `N` numbers.
pub fn floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))
}

/// A 3×3 covariance given as one variance or nine row-major entries.
fn covariance3(s: &str) -> Result<Mat3, String> {
    match floats::<1>(s) {
        Ok([v]) => Ok(Mat3::identity() * v),
        Err(_) => floats::<9>(s).map(|v| Mat3::from_row_slice(&v)),
    }
}

/// A 2×2 covariance given as one variance or four row-major entries.
fn covariance2(s: &str) -> Result<Mat2, String> {
    match floats::<1>(s) {
        Ok([v]) => Ok(Mat2::identity() * v),
        Err(_) => floats::<4>(s).map(|v| Mat2::from_row_slice(&v)),
    }
}

/// Parsed `--offsets` value.
#[derive(Clone, Debug, PartialEq)]
pub struct Offsets(pub Vec<[f64; 2]>);

/// `mm:deg` pairs separated by commas.
fn offsets(s: &str) -> Result<Offsets, String> {
    s.split(',')
        .map(|pair| {
            let (a, b) = pair.split_once(':').ok_or_else(|| format!("{pair:?}: expected mm:deg"))?;
            let mm = a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}"))?;
            let deg = b.trim().parse::<f64>().map_err(|e| format!("{b:?}: {e}"))?;
            Ok([mm, deg])
        })
        .collect::<Result<_, String>>()
        .map(Offsets)
}

macro_rules! set {
    ($($target:expr => $value:expr),* $(,)?) => {
        $(if let Some(v) = $value { $target = v; })*
    };
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Noise model")]
pub struct NoiseArgs {
    /// Contour position covariance, px²: one variance or a,b,c,d row-major
    #[arg(long, value_parser = covariance2)]
    pub sigma2d: Option<Mat2>,
    /// von Mises concentration of contour orientations
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Covariance for features without one, mm²: one variance or nine entries
    #[arg(long, value_parser = covariance3)]
    pub sigma3d_default: Option<Mat3>,
    #[arg(long)]
    pub trim_ratio_3d: Option<f64>,
    #[arg(long)]
    pub trim_decay_iterations: Option<usize>,
    #[arg(long)]
    pub chi2_p: Option<f64>,
    /// Radians
    #[arg(long)]
    pub orientation_gate: Option<f64>,
    #[arg(long)]
    pub contour_outlier_cap: Option<f64>,
}

impl NoiseArgs {
    pub fn apply(&self, n: &mut NoiseModel) {
        set! {
            n.sigma2d => self.sigma2d,
            n.kappa => self.kappa,
            n.sigma3d_default => self.sigma3d_default,
            n.trim_ratio_3d => self.trim_ratio_3d,
            n.trim_decay_iterations => self.trim_decay_iterations,
            n.chi2_p => self.chi2_p,
            n.orientation_gate => self.orientation_gate,
            n.contour_outlier_cap => self.contour_outlier_cap,
        }
    }
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Solver")]
pub struct SolverArgs {
    /// s_min,s_max
    #[arg(long, value_parser = floats::<2>)]
    pub scale_bounds: Option<[f64; 2]>,
    #[arg(long)]
    pub max_outer_iterations: Option<usize>,
    #[arg(long)]
    pub translation_epsilon: Option<f64>,
    #[arg(long)]
    pub rotation_epsilon: Option<f64>,
    #[arg(long)]
    pub scale_epsilon: Option<f64>,
    #[arg(long)]
    pub inner_max_steps: Option<usize>,
    #[arg(long)]
    pub inner_gradient_tolerance: Option<f64>,
    #[arg(long)]
    pub constraint_backup_fraction: Option<f64>,
    /// Depth slack of the contour visibility test during registration, mm
    #[arg(long)]
    pub visibility_tolerance: Option<f64>,
    #[arg(long)]
    pub solver_seed: Option<u64>,
}

impl SolverArgs {
    pub fn apply(&self, c: &mut SolverConfig) {
        set! {
            c.scale_bounds => self.scale_bounds,
            c.max_outer_iterations => self.max_outer_iterations,
            c.translation_epsilon => self.translation_epsilon,
            c.rotation_epsilon => self.rotation_epsilon,
            c.scale_epsilon => self.scale_epsilon,
            c.inner.max_steps => self.inner_max_steps,
            c.inner.gradient_tolerance => self.inner_gradient_tolerance,
            c.constraint_backup_fraction => self.constraint_backup_fraction,
            c.visibility_tolerance => self.visibility_tolerance,
            c.seed => self.solver_seed,
        }
    }
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Multi-start")]
pub struct MultistartArgs {
    /// Candidates per starting pose, the pose included
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub candidate_translation: Option<f64>,
    /// Degrees
    #[arg(long)]
    pub candidate_rotation: Option<f64>,
}

impl MultistartArgs {
    pub fn apply(&self, m: &mut MultistartConfig) {
        set! {
            m.count => self.candidates,
            m.translation_mm => self.candidate_translation,
            m.rotation_deg => self.candidate_rotation,
        }
    }
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Synthetic scene")]
pub struct SceneArgs {
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub noise_std_parallel: Option<f64>,
    #[arg(long)]
    pub noise_std_orthogonal: Option<f64>,
    #[arg(long)]
    pub camera_translation_noise: Option<f64>,
    #[arg(long)]
    pub camera_rotation_noise_deg: Option<f64>,
    /// lo,hi in mm
    #[arg(long, value_parser = floats::<2>)]
    pub misalignment_translation: Option<[f64; 2]>,
    /// lo,hi in degrees
    #[arg(long, value_parser = floats::<2>)]
    pub misalignment_rotation_deg: Option<[f64; 2]>,
    /// lo,hi
    #[arg(long, value_parser = floats::<2>)]
    pub misalignment_scale: Option<[f64; 2]>,
    /// One variance or a,b,c,d row-major, px²
    #[arg(long, value_parser = covariance2)]
    pub contour_sigma2d: Option<Mat2>,
    #[arg(long)]
    pub contour_kappa: Option<f64>,
    #[arg(long)]
    pub contour_stride: Option<usize>,
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    #[arg(long)]
    pub outlier_magnitude: Option<f64>,
    /// Depth slack when sampling visible points, mm
    #[arg(long)]
    pub scene_visibility_tolerance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub fx: Option<f64>,
    #[arg(long)]
    pub fy: Option<f64>,
    #[arg(long)]
    pub cx: Option<f64>,
    #[arg(long)]
    pub cy: Option<f64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// a,b,c in mm
    #[arg(long, value_parser = floats::<3>)]
    pub cavity_semi_axes: Option<[f64; 3]>,
    #[arg(long)]
    pub cavity_subdivisions: Option<u32>,
    #[arg(long)]
    pub cavity_bump_count: Option<usize>,
    #[arg(long)]
    pub cavity_bump_amplitude: Option<f64>,
    /// lo,hi in radians
    #[arg(long, value_parser = floats::<2>)]
    pub cavity_bump_width: Option<[f64; 2]>,
    #[arg(long)]
    pub cavity_seed: Option<u64>,
}

impl SceneArgs {
    pub fn apply(&self, s: &mut SceneSpec) {
        set! {
            s.points => self.points,
            s.noise_std_parallel => self.noise_std_parallel,
            s.noise_std_orthogonal => self.noise_std_orthogonal,
            s.camera_translation_noise => self.camera_translation_noise,
            s.camera_rotation_noise_deg => self.camera_rotation_noise_deg,
            s.misalignment_translation => self.misalignment_translation,
            s.misalignment_rotation_deg => self.misalignment_rotation_deg,
            s.misalignment_scale => self.misalignment_scale,
            s.contour_sigma2d => self.contour_sigma2d,
            s.contour_kappa => self.contour_kappa,
            s.contour_stride => self.contour_stride,
            s.outlier_fraction => self.outlier_fraction,
            s.outlier_magnitude => self.outlier_magnitude,
            s.visibility_tolerance => self.scene_visibility_tolerance,
            s.seed => self.seed,
            s.intrinsics.fx => self.fx,
            s.intrinsics.fy => self.fy,
            s.intrinsics.cx => self.cx,
            s.intrinsics.cy => self.cy,
            s.intrinsics.width => self.width,
            s.intrinsics.height => self.height,
            s.cavity.semi_axes => self.cavity_semi_axes,
            s.cavity.subdivisions => self.cavity_subdivisions,
            s.cavity.bump_count => self.cavity_bump_count,
            s.cavity.bump_amplitude => self.cavity_bump_amplitude,
            s.cavity.bump_width => self.cavity_bump_width,
            s.cavity.seed => self.cavity_seed,
        }
    }
}

#[derive(Args, Debug, Default)]
#[command(next_help_heading = "Sweep")]
pub struct SweepArgs {
    /// mm:deg pairs, e.g. 0:0,2:2,4:4
    #[arg(long, value_parser = offsets)]
    pub offsets: Option<Offsets>,
    /// Frame for the reprojection error
    #[arg(long)]
    pub frame: Option<usize>,
    /// Seeds the roll sense of the offsets
    #[arg(long)]
    pub sweep_seed: Option<u64>,
}

impl SweepArgs {
    pub fn apply(&self, s: &mut SweepConfig) {
        if let Some(o) = &self.offsets {
            s.offsets = o.0.clone();
        }
        if self.frame.is_some() {
            s.frame = self.frame;
        }
        set! { s.seed => self.sweep_seed }
    }
}
