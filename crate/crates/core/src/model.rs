//! Shared domain types: the COCO-17 skeleton convention, 2D detections,
//! 3D pose and marker trajectories.
//!
//! All world coordinates are meters, all image coordinates pixels. Errors
//! are reported in millimeters only at report time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of joints in the COCO keypoint convention.
pub const JOINT_COUNT: usize = 17;

/// Joint indices in the canonical COCO-17 ordering.
///
/// The 2D detector convention dictates this order; nothing in the pipeline
/// assigns semantics to indices except through these names.
pub mod joint {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;
}

/// A 3D position in meters.
pub type Point3 = [f64; 3];

/// One frame of a 17-joint pose, world coordinates in meters.
pub type PoseFrame = [Point3; JOINT_COUNT];

/// The 17-joint skeleton: names, connectivity and left/right symmetry.
#[derive(Debug, Clone)]
pub struct Skeleton {
    pub joint_names: [&'static str; JOINT_COUNT],
    /// (parent, child) index pairs describing limb connectivity.
    pub limb_pairs: Vec<(usize, usize)>,
    /// mirror_map[j] is the index of j's left/right counterpart; midline
    /// joints map to themselves. Applying the map twice is the identity.
    pub mirror_map: [usize; JOINT_COUNT],
}

impl Skeleton {
    /// The canonical COCO-17 skeleton.
    pub fn coco17() -> Self {
        Skeleton {
            joint_names: [
                "nose",
                "left_eye",
                "right_eye",
                "left_ear",
                "right_ear",
                "left_shoulder",
                "right_shoulder",
                "left_elbow",
                "right_elbow",
                "left_wrist",
                "right_wrist",
                "left_hip",
                "right_hip",
                "left_knee",
                "right_knee",
                "left_ankle",
                "right_ankle",
            ],
            limb_pairs: vec![
                (5, 7),
                (7, 9),
                (6, 8),
                (8, 10),
                (11, 13),
                (13, 15),
                (12, 14),
                (14, 16),
                (5, 6),
                (11, 12),
                (5, 11),
                (6, 12),
                (0, 1),
                (0, 2),
                (1, 3),
                (2, 4),
            ],
            mirror_map: [0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15],
        }
    }

    /// Index of the left/right counterpart of `j` (or `j` itself on the midline).
    pub fn mirror_of(&self, j: usize) -> usize {
        self.mirror_map[j]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|&n| n == name)
    }
}

/// A single 2D joint detection in pixels with detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
    /// Unitless detector confidence in [0, 1].
    pub confidence: f64,
}

impl Keypoint2D {
    pub fn new(u: f64, v: f64, confidence: f64) -> Result<Self> {
        let kp = Keypoint2D { u, v, confidence };
        kp.validate("keypoint")?;
        Ok(kp)
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        if !self.u.is_finite() || !self.v.is_finite() {
            return Err(Error::format(path, "pixel coordinates must be finite"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::format(
                format!("{path}.confidence"),
                format!("confidence {} outside [0, 1]", self.confidence),
            ));
        }
        Ok(())
    }
}

/// All detections of one camera at one frame. Absent entries are joints the
/// detector dropped; they stay absent through the pipeline (no sentinels).
#[derive(Debug, Clone)]
pub struct KeypointFrame {
    pub camera_id: String,
    pub frame_index: usize,
    pub keypoints: [Option<Keypoint2D>; JOINT_COUNT],
}

/// A T x 17 x 3 joint trajectory in meters at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub sample_rate_hz: f64,
    pub frames: Vec<PoseFrame>,
}

impl PoseSequence {
    pub fn new(sample_rate_hz: f64, frames: Vec<PoseFrame>) -> Result<Self> {
        let seq = PoseSequence {
            sample_rate_hz,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::format(
                "sample_rate_hz",
                format!("must be positive, got {}", self.sample_rate_hz),
            ));
        }
        if self.frames.is_empty() {
            return Err(Error::format("frames", "sequence must have T >= 1 frames"));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            for (j, p) in frame.iter().enumerate() {
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(Error::format(
                        format!("frames[{t}][{j}]"),
                        "coordinates must be finite",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// A marker-based capture: M named markers over T frames, with per-frame
/// visibility (occluded markers are `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerSequence {
    pub sample_rate_hz: f64,
    pub marker_names: Vec<String>,
    pub frames: Vec<Vec<Option<Point3>>>,
}

impl MarkerSequence {
    pub fn new(
        sample_rate_hz: f64,
        marker_names: Vec<String>,
        frames: Vec<Vec<Option<Point3>>>,
    ) -> Result<Self> {
        let seq = MarkerSequence {
            sample_rate_hz,
            marker_names,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::format("sample_rate_hz", "must be positive"));
        }
        if self.marker_names.len() < 3 {
            return Err(Error::format(
                "marker_names",
                "need at least 3 markers for any joint to be alignable",
            ));
        }
        let mut sorted = self.marker_names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.marker_names.len() {
            return Err(Error::format("marker_names", "duplicate marker name"));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.marker_names.len() {
                return Err(Error::format(
                    format!("frames[{t}]"),
                    format!(
                        "expected {} markers, got {}",
                        self.marker_names.len(),
                        frame.len()
                    ),
                ));
            }
            for (m, p) in frame.iter().enumerate() {
                if let Some(p) = p {
                    if p.iter().any(|c| !c.is_finite()) {
                        return Err(Error::format(
                            format!("frames[{t}][{m}]"),
                            "coordinates must be finite",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.marker_names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
