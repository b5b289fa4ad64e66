//! File formats.
//!
//! - Rig: JSON list of cameras with row-major `K` and `R`, two radial
//!   distortion coefficients, translation in meters and image size.
//! - Keypoints: JSON lines, one record per (frame, camera) with seventeen
//!   `[u, v, confidence]` entries or `null` for missed detections.
//! - Pose and marker sequences: JSON with `sample_rate_hz` and nested frame
//!   arrays. Numbers round-trip exactly (shortest-representation floats).
//! - Offset model: JSON map of joint name to marker triple and weights.
//! - Calibration inputs: planar board correspondences and identified 3D
//!   observations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::alignment::JointOffsetModel;
use crate::calibrate::{Observation3D, PlanarObservationSet, PlanarView};
use crate::error::{Error, Result};
use crate::geometry::{CameraParams, CameraRig};
use crate::model::{Keypoint2D, KeypointFrame, MarkerSequence, Point3, PoseSequence, JOINT_COUNT};

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_error(path: &Path, e: serde_json::Error) -> Error {
    Error::format(path.display().to_string(), e.to_string())
}

// ---------------------------------------------------------------- rig ----

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    camera_id: String,
    /// 3x3 row-major intrinsic matrix.
    #[serde(rename = "K")]
    k: [f64; 9],
    /// Radial distortion [k1, k2].
    dist: [f64; 2],
    /// 3x3 row-major world-to-camera rotation.
    #[serde(rename = "R")]
    r: [f64; 9],
    /// World-to-camera translation in meters.
    t: [f64; 3],
    /// [width, height] in pixels.
    image_size: [u32; 2],
}

impl CameraRecord {
    fn into_params(self) -> Result<CameraParams> {
        let prefix = format!("camera `{}`", self.camera_id);
        let k = self.k;
        for (idx, name) in [(1usize, "K[0][1]"), (3, "K[1][0]"), (6, "K[2][0]"), (7, "K[2][1]")] {
            if k[idx] != 0.0 {
                return Err(Error::format(
                    format!("{prefix}.{name}"),
                    "intrinsic matrix must have zero skew and zero lower triangle",
                ));
            }
        }
        if k[8] != 1.0 {
            return Err(Error::format(
                format!("{prefix}.K[2][2]"),
                "intrinsic matrix must be normalized (K[2][2] = 1)",
            ));
        }
        let params = CameraParams {
            camera_id: self.camera_id,
            fx: k[0],
            fy: k[4],
            cx: k[2],
            cy: k[5],
            k1: self.dist[0],
            k2: self.dist[1],
            rotation: Matrix3::from_row_slice(&self.r),
            translation: Vector3::from(self.t),
            image_size: self.image_size,
        };
        params.validate()?;
        Ok(params)
    }

    fn from_params(cam: &CameraParams) -> Self {
        let r = cam.rotation;
        CameraRecord {
            camera_id: cam.camera_id.clone(),
            k: [cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0],
            dist: [cam.k1, cam.k2],
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: cam.translation.into(),
            image_size: cam.image_size,
        }
    }
}

/// Load a camera rig. At least two cameras with distinct ids are required.
pub fn load_rig(path: impl AsRef<Path>) -> Result<CameraRig> {
    let path = path.as_ref();
    let records: Vec<CameraRecord> =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    let cameras = records
        .into_iter()
        .map(CameraRecord::into_params)
        .collect::<Result<Vec<_>>>()?;
    CameraRig::new(cameras)
}

pub fn save_rig(rig: &CameraRig, path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<CameraRecord> = rig.cameras().iter().map(CameraRecord::from_params).collect();
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, &records)
        .map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------- keypoints ----

#[derive(Serialize, Deserialize)]
struct KeypointRecord {
    frame_index: usize,
    camera_id: String,
    /// 17 entries of [u, v, confidence], null where the detector missed.
    keypoints: Vec<Option<[f64; 3]>>,
}

/// Load a keypoint stream (JSON lines). Records come back sorted by
/// (frame_index, camera_id) regardless of file order; confidences outside
/// [0, 1] are format errors.
pub fn load_keypoints(path: impl AsRef<Path>) -> Result<Vec<KeypointFrame>> {
    let path = path.as_ref();
    let mut frames = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: KeypointRecord = serde_json::from_str(&line).map_err(|e| {
            Error::format(
                format!("{}:{}", path.display(), lineno + 1),
                e.to_string(),
            )
        })?;
        if record.keypoints.len() != JOINT_COUNT {
            return Err(Error::format(
                format!("{}:{}.keypoints", path.display(), lineno + 1),
                format!("expected {JOINT_COUNT} entries, got {}", record.keypoints.len()),
            ));
        }
        let mut keypoints: [Option<Keypoint2D>; JOINT_COUNT] = [None; JOINT_COUNT];
        for (j, entry) in record.keypoints.iter().enumerate() {
            if let Some([u, v, confidence]) = entry {
                let kp = Keypoint2D {
                    u: *u,
                    v: *v,
                    confidence: *confidence,
                };
                kp.validate(&format!(
                    "{}:{}.keypoints[{j}]",
                    path.display(),
                    lineno + 1
                ))?;
                keypoints[j] = Some(kp);
            }
        }
        frames.push(KeypointFrame {
            camera_id: record.camera_id,
            frame_index: record.frame_index,
            keypoints,
        });
    }
    for (i, a) in frames.iter().enumerate() {
        for b in &frames[i + 1..] {
            if a.frame_index == b.frame_index && a.camera_id == b.camera_id {
                return Err(Error::format(
                    path.display().to_string(),
                    format!(
                        "duplicate record for frame {} camera `{}`",
                        a.frame_index, a.camera_id
                    ),
                ));
            }
        }
    }
    frames.sort_by(|a, b| {
        a.frame_index
            .cmp(&b.frame_index)
            .then_with(|| a.camera_id.cmp(&b.camera_id))
    });
    Ok(frames)
}

pub fn save_keypoints(frames: &[KeypointFrame], path: impl AsRef<Path>) -> Result<()> {
    let mut w = create(path.as_ref())?;
    for f in frames {
        let record = KeypointRecord {
            frame_index: f.frame_index,
            camera_id: f.camera_id.clone(),
            keypoints: f
                .keypoints
                .iter()
                .map(|kp| kp.map(|k| [k.u, k.v, k.confidence]))
                .collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(|e| parse_error(path.as_ref(), e))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------- poses ----

#[derive(Serialize, Deserialize)]
struct PoseFile {
    sample_rate_hz: f64,
    frames: Vec<Vec<[f64; 3]>>,
}

/// Load a pose sequence; round-trips through `save_pose_sequence` are
/// lossless.
pub fn load_pose_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let path = path.as_ref();
    let file: PoseFile =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    let mut frames = Vec::with_capacity(file.frames.len());
    for (t, frame) in file.frames.iter().enumerate() {
        if frame.len() != JOINT_COUNT {
            return Err(Error::format(
                format!("{}.frames[{t}]", path.display()),
                format!("expected {JOINT_COUNT} joints, got {}", frame.len()),
            ));
        }
        let mut out = [[0.0; 3]; JOINT_COUNT];
        out.copy_from_slice(frame);
        frames.push(out);
    }
    PoseSequence::new(file.sample_rate_hz, frames)
}

pub fn save_pose_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    seq.validate()?;
    let file = PoseFile {
        sample_rate_hz: seq.sample_rate_hz,
        frames: seq.frames.iter().map(|f| f.to_vec()).collect(),
    };
    let mut w = create(path.as_ref())?;
    serde_json::to_writer(&mut w, &file).map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------ markers ----

#[derive(Serialize, Deserialize)]
struct MarkerFile {
    sample_rate_hz: f64,
    marker_names: Vec<String>,
    /// Per frame, one entry per marker: position or null when occluded.
    frames: Vec<Vec<Option<Point3>>>,
}

pub fn load_marker_sequence(path: impl AsRef<Path>) -> Result<MarkerSequence> {
    let path = path.as_ref();
    let file: MarkerFile =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    MarkerSequence::new(file.sample_rate_hz, file.marker_names, file.frames)
}

pub fn save_marker_sequence(seq: &MarkerSequence, path: impl AsRef<Path>) -> Result<()> {
    seq.validate()?;
    let file = MarkerFile {
        sample_rate_hz: seq.sample_rate_hz,
        marker_names: seq.marker_names.clone(),
        frames: seq.frames.clone(),
    };
    let mut w = create(path.as_ref())?;
    serde_json::to_writer(&mut w, &file).map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------- offset model ----

pub fn load_offset_model(path: impl AsRef<Path>) -> Result<JointOffsetModel> {
    let path = path.as_ref();
    let model: JointOffsetModel =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    model.validate()?;
    Ok(model)
}

pub fn save_offset_model(model: &JointOffsetModel, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, model).map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}

// -------------------------------------------------- calibration inputs ----

/// Planar correspondences for one camera: a JSON list of views, each a list
/// of `[board_x_m, board_y_m, pixel_u, pixel_v]`.
pub fn load_planar_views(path: impl AsRef<Path>) -> Result<PlanarObservationSet> {
    let path = path.as_ref();
    let raw: Vec<Vec<[f64; 4]>> =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    Ok(planar_set_from_raw(raw))
}

fn planar_set_from_raw(raw: Vec<Vec<[f64; 4]>>) -> PlanarObservationSet {
    PlanarObservationSet {
        views: raw
            .into_iter()
            .map(|view| PlanarView {
                points: view
                    .into_iter()
                    .map(|[bx, by, u, v]| ([bx, by], [u, v]))
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Serialize, Deserialize)]
struct RigCorrespondenceRecord {
    camera_id: String,
    views: Vec<Vec<[f64; 4]>>,
}

/// Rig-level calibration correspondences: one planar view set per camera.
/// View index v is the same physical board pose across all cameras
/// (hardware-synchronized captures).
pub fn load_rig_correspondences(
    path: impl AsRef<Path>,
) -> Result<Vec<(String, PlanarObservationSet)>> {
    let path = path.as_ref();
    let raw: Vec<RigCorrespondenceRecord> =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    if raw.is_empty() {
        return Err(Error::format(
            path.display().to_string(),
            "no cameras in correspondence file",
        ));
    }
    Ok(raw
        .into_iter()
        .map(|r| (r.camera_id, planar_set_from_raw(r.views)))
        .collect())
}

pub fn save_rig_correspondences(
    sets: &[(String, PlanarObservationSet)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let raw: Vec<RigCorrespondenceRecord> = sets
        .iter()
        .map(|(camera_id, set)| RigCorrespondenceRecord {
            camera_id: camera_id.clone(),
            views: set
                .views
                .iter()
                .map(|v| {
                    v.points
                        .iter()
                        .map(|(b, p)| [b[0], b[1], p[0], p[1]])
                        .collect()
                })
                .collect(),
        })
        .collect();
    let mut w = create(path.as_ref())?;
    serde_json::to_writer(&mut w, &raw).map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ObservationRecord {
    camera_id: String,
    point_id: usize,
    pixel: [f64; 2],
}

/// Identified world-point observations for bundle adjustment.
pub fn load_observations(path: impl AsRef<Path>) -> Result<Vec<Observation3D>> {
    let path = path.as_ref();
    let raw: Vec<ObservationRecord> =
        serde_json::from_reader(open(path)?).map_err(|e| parse_error(path, e))?;
    Ok(raw
        .into_iter()
        .map(|r| Observation3D {
            camera_id: r.camera_id,
            point_id: r.point_id,
            pixel: r.pixel,
        })
        .collect())
}

pub fn save_observations(obs: &[Observation3D], path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<ObservationRecord> = obs
        .iter()
        .map(|o| ObservationRecord {
            camera_id: o.camera_id.clone(),
            point_id: o.point_id,
            pixel: o.pixel,
        })
        .collect();
    let mut w = create(path.as_ref())?;
    serde_json::to_writer(&mut w, &raw).map_err(|e| parse_error(path.as_ref(), e))?;
    w.flush()?;
    Ok(())
}
