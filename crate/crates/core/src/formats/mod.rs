//! Text and binary formats for meshes, features, contours, cameras and
//! transforms, plus whole-scene export.
//!
//! Features CSV: `x,y,z` optionally followed by the six upper-triangular
//! covariance entries `xx,xy,xz,yy,yz,zz`. Contours CSV: `frame_id,u,v,nu,nv`.
//! Both accept an optional header row and `#` comment lines.
//!
//! Cameras JSON:
//! `{"frames": [{"id": 0, "intrinsics": {...}, "pose": {"translation": [..], "rotation": [w, x, y, z]}}]}`
//! where the pose maps cloud coordinates into the camera frame.

mod mesh;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use mesh::{parse_obj, parse_ply, write_obj, write_ply_ascii, write_ply_binary};

use crate::camera::{CameraFrame, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::features::{Feature3D, OrientedContourPoint};
use crate::geometry::{Mat3, SimilarityTransform, Vec2, Vec3};
use crate::mesh::TriangleMesh;
use crate::synthetic::{GroundTruth, Scene};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads a `.ply` or `.obj` mesh, chosen by extension.
pub fn read_mesh(path: &Path) -> Result<TriangleMesh> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let context = path.display().to_string();
    let relabel = |e: Error| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            context: context.clone(),
            line,
            message,
        },
        other => other,
    };
    match ext.as_str() {
        "ply" => parse_ply(&read_bytes(path)?).map_err(relabel),
        "obj" => parse_obj(&read_text(path)?).map_err(relabel),
        _ => Err(Error::parse(context.clone(), 0, "unknown mesh extension; expected .ply or .obj")),
    }
}

/// Numeric CSV rows with their 1-based line numbers. A first row whose
/// leading field is not a number is taken as a header and skipped.
fn numeric_rows(text: &str, context: &str) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(context, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if k == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(i, field)| match field.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(context, line, format!("column {}: invalid number {field:?}", i + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, values));
    }
    Ok(rows)
}

/// Parses a features CSV. Rows without covariance take `default_covariance`.
pub fn parse_features_csv(text: &str, default_covariance: &Mat3) -> Result<Vec<Feature3D>> {
    const CONTEXT: &str = "features csv";
    numeric_rows(text, CONTEXT)?
        .into_iter()
        .map(|(line, v)| {
            let covariance = match v.len() {
                3 => *default_covariance,
                9 => Mat3::new(v[3], v[4], v[5], v[4], v[6], v[7], v[5], v[7], v[8]),
                n => return Err(Error::parse(CONTEXT, line, format!("expected 3 or 9 columns, found {n}"))),
            };
            Feature3D::new(Vec3::new(v[0], v[1], v[2]), covariance).map_err(|e| Error::parse(CONTEXT, line, e.to_string()))
        })
        .collect()
}

pub fn write_features_csv(features: &[Feature3D]) -> String {
    let mut out = String::from("x,y,z,cxx,cxy,cxz,cyy,cyz,czz\n");
    for f in features {
        let (p, c) = (&f.position, &f.covariance);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.x,
            p.y,
            p.z,
            c[(0, 0)],
            c[(0, 1)],
            c[(0, 2)],
            c[(1, 1)],
            c[(1, 2)],
            c[(2, 2)]
        ));
    }
    out
}

pub fn parse_contours_csv(text: &str) -> Result<Vec<OrientedContourPoint>> {
    const CONTEXT: &str = "contours csv";
    numeric_rows(text, CONTEXT)?
        .into_iter()
        .map(|(line, v)| {
            if v.len() != 5 {
                return Err(Error::parse(CONTEXT, line, format!("expected 5 columns, found {}", v.len())));
            }
            if v[0] < 0.0 || v[0].fract() != 0.0 || v[0] > u32::MAX as f64 {
                return Err(Error::parse(CONTEXT, line, format!("frame_id {} is not a non-negative integer", v[0])));
            }
            OrientedContourPoint::new(Vec2::new(v[1], v[2]), Vec2::new(v[3], v[4]), v[0] as usize)
                .map_err(|e| Error::parse(CONTEXT, line, e.to_string()))
        })
        .collect()
}

pub fn write_contours_csv(frames: &[CameraFrame]) -> String {
    let mut out = String::from("frame_id,u,v,nu,nv\n");
    for frame in frames {
        for c in &frame.contours {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                frame.id, c.position.x, c.position.y, c.normal.x, c.normal.y
            ));
        }
    }
    out
}

/// Rigid pose as translation plus unit quaternion `[w, x, y, z]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl PoseDoc {
    pub fn from_transform(t: &SimilarityTransform) -> Self {
        Self {
            translation: t.translation.into(),
            rotation: t.quaternion_wxyz(),
        }
    }

    pub fn to_transform(&self) -> Result<SimilarityTransform> {
        let norm = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::Domain(format!("rotation quaternion has norm {norm}, expected 1")));
        }
        SimilarityTransform::from_quaternion(1.0, self.rotation, self.translation.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDoc {
    pub id: usize,
    pub intrinsics: CameraIntrinsics,
    pub pose: PoseDoc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CamerasDoc {
    pub frames: Vec<FrameDoc>,
}

fn json_error(context: &str) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        context: context.to_string(),
        source,
    }
}

/// Parses a cameras document into frames without contours, in file order.
pub fn parse_cameras_json(text: &str) -> Result<Vec<CameraFrame>> {
    const CONTEXT: &str = "cameras json";
    let doc: CamerasDoc = serde_json::from_str(text).map_err(json_error(CONTEXT))?;
    let mut seen = std::collections::BTreeSet::new();
    doc.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let field = |e: Error| Error::parse(CONTEXT, 0, format!("frames[{i}]: {e}"));
            if !seen.insert(f.id) {
                return Err(Error::parse(CONTEXT, 0, format!("frames[{i}]: duplicate frame id {}", f.id)));
            }
            f.intrinsics.validate().map_err(field)?;
            Ok(CameraFrame {
                id: f.id,
                intrinsics: f.intrinsics,
                cloud_pose: f.pose.to_transform().map_err(field)?,
                contours: Vec::new(),
            })
        })
        .collect()
}

pub fn write_cameras_json(frames: &[CameraFrame]) -> String {
    let doc = CamerasDoc {
        frames: frames
            .iter()
            .map(|f| FrameDoc {
                id: f.id,
                intrinsics: f.intrinsics,
                pose: PoseDoc::from_transform(&f.cloud_pose),
            })
            .collect(),
    };
    to_json(&doc)
}

/// Distributes contour points to their frames by id, keeping file order.
pub fn attach_contours(frames: &mut [CameraFrame], contours: Vec<OrientedContourPoint>) -> Result<()> {
    let index: BTreeMap<usize, usize> = frames.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
    for c in contours {
        let &slot = index
            .get(&c.frame_id)
            .ok_or_else(|| Error::parse("contours csv", 0, format!("frame_id {} has no camera", c.frame_id)))?;
        frames[slot].contours.push(c);
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CandidatesDoc {
    One(SimilarityTransform),
    Many(Vec<SimilarityTransform>),
}

/// One transform or a list of them.
pub fn parse_candidates_json(text: &str) -> Result<Vec<SimilarityTransform>> {
    let doc: CandidatesDoc = serde_json::from_str(text).map_err(json_error("candidates json"))?;
    let list = match doc {
        CandidatesDoc::One(t) => vec![t],
        CandidatesDoc::Many(v) => v,
    };
    if list.is_empty() {
        return Err(Error::EmptyInput("candidate list"));
    }
    Ok(list)
}

pub fn parse_ground_truth_json(text: &str) -> Result<GroundTruth> {
    serde_json::from_str(text).map_err(json_error("ground truth json"))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// File names used by [`write_scene`] and [`read_scene`].
pub const SCENE_FILES: [&str; 5] = ["mesh.ply", "features.csv", "contours.csv", "cameras.json", "ground_truth.json"];

/// Writes a generated scene as files the registration inputs accept.
pub fn write_scene(dir: &Path, mesh: &TriangleMesh, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(SCENE_FILES[0]), write_ply_ascii(mesh))?;
    write_file(&dir.join(SCENE_FILES[1]), write_features_csv(&scene.features))?;
    write_file(&dir.join(SCENE_FILES[2]), write_contours_csv(&scene.frames))?;
    write_file(&dir.join(SCENE_FILES[3]), write_cameras_json(&scene.frames))?;
    write_file(&dir.join(SCENE_FILES[4]), to_json(&scene.ground_truth))
}

/// Reads features, cameras and contours from explicit paths.
pub fn read_inputs(
    features: &Path,
    contours: Option<&Path>,
    cameras: &Path,
    default_covariance: &Mat3,
) -> Result<(Vec<Feature3D>, Vec<CameraFrame>)> {
    let relabel = |path: &Path| {
        let name = path.display().to_string();
        move |e: Error| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                context: name,
                line,
                message,
            },
            Error::Json { source, .. } => Error::Json { context: name, source },
            other => other,
        }
    };
    let feats = parse_features_csv(&read_text(features)?, default_covariance).map_err(relabel(features))?;
    let mut frames = parse_cameras_json(&read_text(cameras)?).map_err(relabel(cameras))?;
    if let Some(path) = contours {
        let points = parse_contours_csv(&read_text(path)?).map_err(relabel(path))?;
        attach_contours(&mut frames, points).map_err(relabel(path))?;
    }
    Ok((feats, frames))
}

/// Reads back a directory written by [`write_scene`].
pub fn read_scene(dir: &Path, default_covariance: &Mat3) -> Result<(TriangleMesh, Scene)> {
    let mesh = read_mesh(&dir.join(SCENE_FILES[0]))?;
    let (features, frames) = read_inputs(
        &dir.join(SCENE_FILES[1]),
        Some(&dir.join(SCENE_FILES[2])),
        &dir.join(SCENE_FILES[3]),
        default_covariance,
    )?;
    let gt_path = dir.join(SCENE_FILES[4]);
    let ground_truth = parse_ground_truth_json(&read_text(&gt_path)?)?;
    Ok((
        mesh,
        Scene {
            features,
            frames,
            ground_truth,
        },
    ))
}
