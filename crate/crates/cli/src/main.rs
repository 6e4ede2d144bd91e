//! `vimlop`: register a scaled 3D feature cloud and per-frame contours to a
//! mesh, simulate scenes, run initialization sweeps and draw overlays.
//!
//! Exit codes: 0 converged / success, 2 registration did not converge,
//! 3 infeasible initialization, 4 degenerate geometry, 5 I/O failure,
//! 6 invalid configuration or input, 1 anything else.

mod config;
mod overlay;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vimlop::camera::CameraFrame;
use vimlop::correspondence::IndexedMesh;
use vimlop::formats::{
    parse_candidates_json, parse_ground_truth_json, read_inputs, read_mesh, read_scene, read_text, to_json,
    write_file, write_scene,
};
use vimlop::geometry::{SimilarityTransform, Vec3};
use vimlop::registration::{multistart_register, perturbed_candidates, Problem};
use vimlop::render::render_depth;
use vimlop::synthetic::{evaluate_tre, generate_scene, perturbation_sweep};
use vimlop::Error;

use config::{MultistartArgs, NoiseArgs, RunConfig, SceneArgs, SolverArgs, SweepArgs};
use report::{history_csv, overlay_csv, ranking_csv, ranking_table, sweep_csv, OverlayRow, Report};

pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;
pub const EXIT_IO: u8 = 5;
pub const EXIT_CONFIG: u8 = 6;

#[derive(Parser, Debug)]
#[command(name = "vimlop", version, about = "Video-to-mesh registration with oriented contours")]
struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON file with "noise", "solver", "scene", "sweep" and "multistart" sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, env = "VIMLOP_OUT_DIR", default_value = "vimlop-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register features and contours to a mesh
    Register {
        #[command(flatten)]
        common: Common,
        /// Mesh (.ply or .obj) in model coordinates
        #[arg(long)]
        mesh: PathBuf,
        /// Features CSV: x,y,z[,cxx,cxy,cxz,cyy,cyz,czz]
        #[arg(long)]
        features: PathBuf,
        /// Contours CSV: frame_id,u,v,nu,nv
        #[arg(long)]
        contours: Option<PathBuf>,
        /// Cameras JSON
        #[arg(long)]
        cameras: PathBuf,
        /// Initial transform(s): one JSON transform or a list; identity when absent
        #[arg(long)]
        init: Option<PathBuf>,
        /// Ground truth JSON from `simulate`; adds TRE to the report
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Write each frame's depth buffer at the final pose as PGM
        #[arg(long)]
        dump_depth: bool,
        /// Write contour overlays at the final pose
        #[arg(long)]
        overlay: bool,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        multistart: MultistartArgs,
    },
    /// Generate a synthetic scene and write it as replayable input files
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use this mesh instead of the built-in cavity
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Register one scene from a series of offset initial poses
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Directory written by `simulate`; a scene is generated when absent
        #[arg(long)]
        scene_dir: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        noise: NoiseArgs,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Draw video contours against the model contours at a given pose
    Overlay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long)]
        contours: PathBuf,
        /// A report from `register`, or a bare transform JSON
        #[arg(long)]
        transform: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::InfeasibleInit { .. } => EXIT_INFEASIBLE,
            Error::DegenerateGeometry(_) => EXIT_DEGENERATE,
            Error::Parse { .. }
            | Error::Json { .. }
            | Error::Domain(_)
            | Error::InvalidCovariance(_)
            | Error::NonManifoldEdge(..)
            | Error::Topology(_)
            | Error::EmptyInput(_) => EXIT_CONFIG,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn load_config(common: &Common, apply: impl FnOnce(&mut RunConfig)) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::from(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn load_mesh(path: &Path) -> Result<IndexedMesh, Failure> {
    let mesh = read_mesh(path)?;
    IndexedMesh::new(mesh).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    })
}

fn contour_count(frames: &[CameraFrame]) -> usize {
    frames.iter().map(|f| f.contours.len()).sum()
}

fn read_transform(path: &Path) -> Result<SimilarityTransform, Failure> {
    let text = read_text(path)?;
    let json = |source| {
        Failure::from(Error::Json {
            context: path.display().to_string(),
            source,
        })
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json)?;
    let inner = match value.get("transform") {
        Some(t) => t.clone(),
        None => value,
    };
    let t: SimilarityTransform = serde_json::from_value(inner).map_err(json)?;
    t.validate().map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(t)
}

fn write_overlays(
    dir: &Path,
    mesh: &IndexedMesh,
    frames: &[CameraFrame],
    t: &SimilarityTransform,
    tolerance: f64,
) -> Result<Vec<OverlayRow>, Failure> {
    let mut rows = Vec::with_capacity(frames.len());
    for f in frames {
        let o = overlay::render_overlay(&mesh.mesh, f, t, tolerance)?;
        let path = dir.join(format!("overlay_frame_{}.png", f.id));
        o.image.save(&path).map_err(|e| Failure {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        })?;
        rows.push(OverlayRow {
            frame: f.id,
            video_points: f.contours.len(),
            model_samples: o.model_samples,
            mean_distance_px: o.mean_distance_px,
        });
    }
    write_file(&dir.join("overlay.csv"), overlay_csv(&rows))?;
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_register(
    common: &Common,
    mesh_path: &Path,
    features_path: &Path,
    contours_path: Option<&Path>,
    cameras_path: &Path,
    init: Option<&Path>,
    ground_truth: Option<&Path>,
    dump_depth: bool,
    overlay: bool,
    args: (&NoiseArgs, &SolverArgs, &MultistartArgs),
) -> CmdResult {
    let config = load_config(common, |c| {
        args.0.apply(&mut c.noise);
        args.1.apply(&mut c.solver);
        args.2.apply(&mut c.multistart);
    })?;
    let mesh = load_mesh(mesh_path)?;
    let (features, frames) = read_inputs(features_path, contours_path, cameras_path, &config.noise.sigma3d_default)?;
    let truth = ground_truth
        .map(|p| read_text(p).and_then(|t| parse_ground_truth_json(&t)))
        .transpose()?;
    let bases = match init {
        Some(p) => parse_candidates_json(&read_text(p)?).map_err(|e| Failure {
            code: EXIT_CONFIG,
            message: format!("{}: {e}", p.display()),
        })?,
        None => vec![SimilarityTransform::identity()],
    };
    let centroid = if frames.is_empty() {
        Vec3::zeros()
    } else {
        frames.iter().map(|f| f.center_in_cloud()).sum::<Vec3>() / frames.len() as f64
    };
    let m = &config.multistart;
    let candidates: Vec<SimilarityTransform> = bases
        .iter()
        .enumerate()
        .flat_map(|(i, b)| {
            perturbed_candidates(
                b,
                m.count,
                m.translation_mm,
                m.rotation_deg,
                &b.apply(&centroid),
                config.solver.seed.wrapping_add(i as u64),
            )
        })
        .collect();
    log::info!(
        "{} features, {} frames, {} contour points, {} candidate(s)",
        features.len(),
        frames.len(),
        contour_count(&frames),
        candidates.len()
    );

    let problem = Problem {
        features: &features,
        frames: &frames,
        mesh: &mesh,
        noise: &config.noise,
        config: &config.solver,
    };
    problem.validate()?;
    let ms = match multistart_register(&problem, &candidates) {
        Ok(ms) => ms,
        Err(all) => {
            for run in &all.failures {
                if let Err(f) = &run.outcome {
                    eprintln!("candidate {}: {}", run.candidate, f);
                }
            }
            let first = all.failures.into_iter().find_map(|r| r.outcome.err()).expect("at least one candidate");
            return Err(first.error.into());
        }
    };
    let tre = |t: &SimilarityTransform| truth.as_ref().map(|g| evaluate_tre(t, g));
    let report = Report::new(&ms, &candidates, features.len(), contour_count(&frames), tre);

    let dir = &common.out_dir;
    create_dir(dir)?;
    write_file(&dir.join("report.json"), to_json(&report))?;
    write_file(&dir.join("history.csv"), history_csv(&report.history))?;
    if candidates.len() > 1 {
        write_file(&dir.join("ranking.csv"), ranking_csv(&report.ranking))?;
        print!("{}", ranking_table(&report.ranking));
    }
    if dump_depth {
        for f in &frames {
            let depth = render_depth(&mesh.mesh, &f.camera(&report.transform));
            write_file(&dir.join(format!("depth_frame_{}.pgm", f.id)), depth.to_pgm())?;
        }
    }
    if overlay {
        write_overlays(dir, &mesh, &frames, &report.transform, config.solver.visibility_tolerance)?;
    }

    let t = &report.transform;
    let [qw, qx, qy, qz] = t.quaternion_wxyz();
    println!(
        "{} after {} iterations: scale {:.6}, rotation [{qw:.6}, {qx:.6}, {qy:.6}, {qz:.6}], translation [{:.4}, {:.4}, {:.4}]",
        if report.converged { "converged" } else { "not converged" },
        report.iterations,
        t.scale,
        t.translation.x,
        t.translation.y,
        t.translation.z
    );
    let opt = |v: Option<f64>, unit: &str| v.map_or("n/a".to_string(), |v| format!("{v:.4} {unit}"));
    println!(
        "3D inliers {}/{}, mean residual {}; contour inliers {}/{}, mean contour error {}",
        report.inliers_3d,
        report.features,
        opt(report.mean_residual_3d_mm, "mm"),
        report.inliers_2d,
        report.contour_points,
        opt(report.mean_contour_error_inliers_px, "px"),
    );
    if let Some(tre) = report.tre_mm {
        println!("TRE {tre:.4} mm");
    }
    Ok(if report.converged { 0 } else { EXIT_NOT_CONVERGED })
}

fn cmd_simulate(common: &Common, mesh_path: Option<&Path>, scene: &SceneArgs) -> CmdResult {
    let config = load_config(common, |c| scene.apply(&mut c.scene))?;
    let spec = &config.scene;
    let mesh = match mesh_path {
        Some(p) => load_mesh(p)?,
        None => IndexedMesh::new(spec.build_mesh())?,
    };
    let generated = generate_scene(spec, &mesh)?;
    let dir = &common.out_dir;
    write_scene(dir, &mesh.mesh, &generated)?;
    write_file(&dir.join("scene_spec.json"), to_json(spec))?;
    println!(
        "wrote {} features, {} frames, {} contour points, {} TRE targets to {}",
        generated.features.len(),
        generated.frames.len(),
        contour_count(&generated.frames),
        generated.ground_truth.targets.len(),
        dir.display()
    );
    Ok(0)
}

fn cmd_sweep(common: &Common, scene_dir: Option<&Path>, args: (&SceneArgs, &NoiseArgs, &SolverArgs, &SweepArgs)) -> CmdResult {
    let config = load_config(common, |c| {
        args.0.apply(&mut c.scene);
        args.1.apply(&mut c.noise);
        args.2.apply(&mut c.solver);
        args.3.apply(&mut c.sweep);
    })?;
    let (mesh, scene) = match scene_dir {
        Some(d) => {
            let (m, s) = read_scene(d, &config.noise.sigma3d_default)?;
            (IndexedMesh::new(m)?, s)
        }
        None => {
            let m = IndexedMesh::new(config.scene.build_mesh())?;
            let s = generate_scene(&config.scene, &m)?;
            (m, s)
        }
    };
    let frame = config.sweep.frame.unwrap_or(scene.frames.len() / 2);
    if frame >= scene.frames.len() {
        return Err(Failure {
            code: EXIT_CONFIG,
            message: format!("sweep frame {frame} out of range ({} frames)", scene.frames.len()),
        });
    }
    let offsets: Vec<(f64, f64)> = config.sweep.offsets.iter().map(|o| (o[0], o[1])).collect();
    let rows = perturbation_sweep(&scene, &mesh, &config.noise, &config.solver, &offsets, frame, config.sweep.seed);
    create_dir(&common.out_dir)?;
    write_file(&common.out_dir.join("sweep.csv"), sweep_csv(&rows))?;
    println!("{:>10}{:>10}{:>16}{:>14}{:>10}{:>11}", "offset_mm", "offset_deg", "reprojection_px", "contour_px", "tre_mm", "converged");
    for r in &rows {
        println!(
            "{:>10.2}{:>10.2}{:>16.3}{:>14}{:>10.3}{:>11}",
            r.offset_mm,
            r.offset_deg,
            r.reprojection_px,
            r.contour_err_px.map_or("-".into(), |v| format!("{v:.3}")),
            r.tre_mm,
            if r.failure.is_some() { "failed" } else if r.converged { "yes" } else { "no" }
        );
    }
    Ok(0)
}

fn cmd_overlay(
    common: &Common,
    mesh_path: &Path,
    cameras: &Path,
    contours: &Path,
    transform: &Path,
    solver: &SolverArgs,
) -> CmdResult {
    let config = load_config(common, |c| solver.apply(&mut c.solver))?;
    let mesh = load_mesh(mesh_path)?;
    let t = read_transform(transform)?;
    let mut frames = vimlop::formats::parse_cameras_json(&read_text(cameras)?).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", cameras.display()),
    })?;
    let points = vimlop::formats::parse_contours_csv(&read_text(contours)?).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", contours.display()),
    })?;
    vimlop::formats::attach_contours(&mut frames, points).map_err(|e| Failure {
        code: EXIT_CONFIG,
        message: format!("{}: {e}", contours.display()),
    })?;
    create_dir(&common.out_dir)?;
    let rows = write_overlays(&common.out_dir, &mesh, &frames, &t, config.solver.visibility_tolerance)?;
    for r in &rows {
        println!(
            "frame {}: {} video points, {} model samples, mean distance {}",
            r.frame,
            r.video_points,
            r.model_samples,
            r.mean_distance_px.map_or("n/a".into(), |d| format!("{d:.3} px"))
        );
    }
    Ok(0)
}

fn run(cli: Cli) -> CmdResult {
    match &cli.command {
        Command::Register {
            common,
            mesh,
            features,
            contours,
            cameras,
            init,
            ground_truth,
            dump_depth,
            overlay,
            noise,
            solver,
            multistart,
        } => cmd_register(
            common,
            mesh,
            features,
            contours.as_deref(),
            cameras,
            init.as_deref(),
            ground_truth.as_deref(),
            *dump_depth,
            *overlay,
            (noise, solver, multistart),
        ),
        Command::Simulate { common, mesh, scene } => cmd_simulate(common, mesh.as_deref(), scene),
        Command::Sweep {
            common,
            scene_dir,
            scene,
            noise,
            solver,
            sweep,
        } => cmd_sweep(common, scene_dir.as_deref(), (scene, noise, solver, sweep)),
        Command::Overlay {
            common,
            mesh,
            cameras,
            contours,
            transform,
            solver,
        } => cmd_overlay(common, mesh, cameras, contours, transform, solver),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
