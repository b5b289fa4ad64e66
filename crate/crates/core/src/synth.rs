//! Synthetic scenes with analytic ground truth: virtual camera rings,
//! parametric human-like motions, and a 2D-detector corruption model
//! (noise, left/right swaps, dropout, confidence). Every pipeline stage can
//! be checked against these scenes exactly.

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::geometry::{project, CameraParams, CameraRig};
use crate::model::{joint, Keypoint2D, KeypointFrame, Point3, PoseSequence, Skeleton, JOINT_COUNT};

/// Shared intrinsics for generated cameras.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct IntrinsicsTemplate {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for IntrinsicsTemplate {
    fn default() -> Self {
        IntrinsicsTemplate {
            fx: 1100.0,
            fy: 1100.0,
            cx: 960.0,
            cy: 600.0,
            k1: -0.05,
            k2: 0.01,
        }
    }
}

/// A ring of inward-looking cameras around the capture volume.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub camera_count: usize,
    pub ring_radius_m: f64,
    /// Camera heights in meters, cycled around the ring (mixing chest-height
    /// and ceiling cameras like the real rig).
    pub heights_m: Vec<f64>,
    pub look_at: Point3,
    pub intrinsics: IntrinsicsTemplate,
    pub image_size: [u32; 2],
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            camera_count: 7,
            ring_radius_m: 3.0,
            heights_m: vec![1.2, 2.5],
            look_at: [0.0, 0.0, 1.0],
            intrinsics: IntrinsicsTemplate::default(),
            image_size: [1920, 1200],
        }
    }
}

/// Build the rig described by `spec`; every camera must see the look-at
/// point inside its image bounds.
pub fn make_rig(spec: &RigSpec) -> Result<CameraRig> {
    if spec.camera_count < 2 {
        return Err(Error::spec(
            "camera_count",
            format!("a rig needs at least 2 cameras, got {}", spec.camera_count),
        ));
    }
    if !(spec.ring_radius_m > 0.0) {
        return Err(Error::spec("ring_radius_m", "radius must be positive"));
    }
    if spec.heights_m.is_empty() {
        return Err(Error::spec("heights_m", "need at least one camera height"));
    }
    if spec.image_size[0] == 0 || spec.image_size[1] == 0 {
        return Err(Error::spec("image_size", "image size must be positive"));
    }
    if !(spec.intrinsics.fx > 0.0 && spec.intrinsics.fy > 0.0) {
        return Err(Error::spec("intrinsics", "focal lengths must be positive"));
    }

    let target = Vector3::from(spec.look_at);
    let mut cameras = Vec::with_capacity(spec.camera_count);
    for i in 0..spec.camera_count {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / spec.camera_count as f64;
        let center = Vector3::new(
            spec.look_at[0] + spec.ring_radius_m * angle.cos(),
            spec.look_at[1] + spec.ring_radius_m * angle.sin(),
            spec.heights_m[i % spec.heights_m.len()],
        );
        let forward = target - center;
        if forward.norm() < 1e-9 {
            return Err(Error::spec(
                "heights_m",
                format!("camera {i} coincides with the look-at point"),
            ));
        }
        let forward = forward.normalize();
        let up = Vector3::new(0.0, 0.0, 1.0);
        let x = forward.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::spec(
                "heights_m",
                format!("camera {i} looks straight along the vertical; orientation ambiguous"),
            ));
        }
        let x = x.normalize();
        let y = forward.cross(&x).normalize();
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), forward.transpose()]);
        let cam = CameraParams {
            camera_id: format!("cam{i}"),
            fx: spec.intrinsics.fx,
            fy: spec.intrinsics.fy,
            cx: spec.intrinsics.cx,
            cy: spec.intrinsics.cy,
            k1: spec.intrinsics.k1,
            k2: spec.intrinsics.k2,
            rotation,
            translation: -rotation * center,
            image_size: spec.image_size,
        };
        let px = project(&cam, spec.look_at, true).map_err(|_| {
            Error::spec("look_at", format!("camera {i} cannot see the look-at point"))
        })?;
        if px[0] < 0.0
            || px[1] < 0.0
            || px[0] >= spec.image_size[0] as f64
            || px[1] >= spec.image_size[1] as f64
        {
            return Err(Error::spec(
                "look_at",
                format!("look-at projects outside camera {i}'s image: ({:.1}, {:.1})", px[0], px[1]),
            ));
        }
        cameras.push(cam);
    }
    CameraRig::new(cameras)
}

/// Body segment dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BodyDims {
    pub shoulder_width: f64,
    pub hip_width: f64,
    /// Mid-hip to mid-shoulder.
    pub torso_height: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shank: f64,
    pub hip_height: f64,
}

impl Default for BodyDims {
    fn default() -> Self {
        BodyDims {
            shoulder_width: 0.38,
            hip_width: 0.24,
            torso_height: 0.52,
            upper_arm: 0.28,
            forearm: 0.26,
            thigh: 0.42,
            shank: 0.42,
            hip_height: 0.92,
        }
    }
}

/// Motion families with closed-form ground truth.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MotionKind {
    /// Standing still.
    Static,
    /// Whole-body translation at constant velocity (m/s).
    Linear { velocity: Point3 },
    /// Arms and legs swing sinusoidally about their proximal joints.
    LimbSwing {
        frequency_hz: f64,
        amplitude_rad: f64,
    },
    /// A short high-acceleration burst: body shift plus enveloped swings.
    CompositeBurst {
        swing_frequency_hz: f64,
        swing_amplitude_rad: f64,
        travel_m: f64,
    },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MotionSpec {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub kind: MotionKind,
    pub dims: BodyDims,
    /// Where the mid-hip starts, ground plane at z = 0.
    pub origin_xy: [f64; 2],
}

impl Default for MotionSpec {
    fn default() -> Self {
        MotionSpec {
            duration_s: 2.0,
            sample_rate_hz: 90.0,
            kind: MotionKind::LimbSwing {
                frequency_hz: 1.0,
                amplitude_rad: 0.4,
            },
            dims: BodyDims::default(),
            origin_xy: [0.0, 0.0],
        }
    }
}

impl MotionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.duration_s > 0.0) {
            return Err(Error::spec("duration_s", "duration and rate must be positive"));
        }
        if (self.duration_s * self.sample_rate_hz).round() < 3.0 {
            return Err(Error::spec(
                "duration_s",
                "need at least 3 frames of motion",
            ));
        }
        let d = &self.dims;
        for (name, v) in [
            ("shoulder_width", d.shoulder_width),
            ("hip_width", d.hip_width),
            ("torso_height", d.torso_height),
            ("upper_arm", d.upper_arm),
            ("forearm", d.forearm),
            ("thigh", d.thigh),
            ("shank", d.shank),
            ("hip_height", d.hip_height),
        ] {
            if !(v > 0.0) {
                return Err(Error::spec(format!("dims.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

/// The resting pose: standing upright at the origin, arms hanging with a
/// slight outward angle, head joints offset from the neck.
fn base_pose(d: &BodyDims) -> [Vector3<f64>; JOINT_COUNT] {
    let mut p = [Vector3::zeros(); JOINT_COUNT];
    let hip_z = d.hip_height;
    let shoulder_z = hip_z + d.torso_height;
    p[joint::LEFT_HIP] = Vector3::new(-d.hip_width / 2.0, 0.0, hip_z);
    p[joint::RIGHT_HIP] = Vector3::new(d.hip_width / 2.0, 0.0, hip_z);
    p[joint::LEFT_SHOULDER] = Vector3::new(-d.shoulder_width / 2.0, 0.0, shoulder_z);
    p[joint::RIGHT_SHOULDER] = Vector3::new(d.shoulder_width / 2.0, 0.0, shoulder_z);
    // arms hang along -z with a small lateral offset
    let arm_dir = Vector3::new(0.15, 0.0, -1.0).normalize();
    p[joint::LEFT_ELBOW] = p[joint::LEFT_SHOULDER]
        + d.upper_arm * Vector3::new(-arm_dir.x, arm_dir.y, arm_dir.z);
    p[joint::RIGHT_ELBOW] = p[joint::RIGHT_SHOULDER] + d.upper_arm * arm_dir;
    p[joint::LEFT_WRIST] =
        p[joint::LEFT_ELBOW] + d.forearm * Vector3::new(-arm_dir.x, arm_dir.y, arm_dir.z);
    p[joint::RIGHT_WRIST] = p[joint::RIGHT_ELBOW] + d.forearm * arm_dir;
    p[joint::LEFT_KNEE] = p[joint::LEFT_HIP] + Vector3::new(0.0, 0.0, -d.thigh);
    p[joint::RIGHT_KNEE] = p[joint::RIGHT_HIP] + Vector3::new(0.0, 0.0, -d.thigh);
    p[joint::LEFT_ANKLE] = p[joint::LEFT_KNEE] + Vector3::new(0.0, 0.0, -d.shank);
    p[joint::RIGHT_ANKLE] = p[joint::RIGHT_KNEE] + Vector3::new(0.0, 0.0, -d.shank);
    let neck = Vector3::new(0.0, 0.0, shoulder_z + 0.10);
    p[joint::NOSE] = neck + Vector3::new(0.0, 0.11, 0.08);
    p[joint::LEFT_EYE] = neck + Vector3::new(-0.033, 0.095, 0.12);
    p[joint::RIGHT_EYE] = neck + Vector3::new(0.033, 0.095, 0.12);
    p[joint::LEFT_EAR] = neck + Vector3::new(-0.075, 0.01, 0.10);
    p[joint::RIGHT_EAR] = neck + Vector3::new(0.075, 0.01, 0.10);
    p
}

/// Rotate a limb chain rigidly about its proximal joint.
fn swing_limb(
    pose: &mut [Vector3<f64>; JOINT_COUNT],
    pivot: usize,
    chain: &[usize],
    axis: Vector3<f64>,
    angle: f64,
) {
    let rot = nalgebra::Rotation3::new(axis * angle);
    let origin = pose[pivot];
    for &j in chain {
        pose[j] = origin + rot * (pose[j] - origin);
    }
}

/// Generate the ground-truth pose sequence for a motion spec. Segment
/// lengths are constant over time because limbs move by rigid rotations.
pub fn gen_motion(spec: &MotionSpec) -> Result<PoseSequence> {
    spec.validate()?;
    let t_len = (spec.duration_s * spec.sample_rate_hz).round() as usize;
    let base = base_pose(&spec.dims);
    let lateral = Vector3::new(1.0, 0.0, 0.0);

    let mut frames = Vec::with_capacity(t_len);
    for k in 0..t_len {
        let t = k as f64 / spec.sample_rate_hz;
        let mut pose = base;

        let (arm_angle, leg_angle, shift) = match &spec.kind {
            MotionKind::Static => (0.0, 0.0, Vector3::zeros()),
            MotionKind::Linear { velocity } => (0.0, 0.0, Vector3::from(*velocity) * t),
            MotionKind::LimbSwing {
                frequency_hz,
                amplitude_rad,
            } => {
                let a = amplitude_rad * (2.0 * std::f64::consts::PI * frequency_hz * t).sin();
                (a, -a * 0.6, Vector3::zeros())
            }
            MotionKind::CompositeBurst {
                swing_frequency_hz,
                swing_amplitude_rad,
                travel_m,
            } => {
                let mid = spec.duration_s / 2.0;
                let width = spec.duration_s / 6.0;
                let envelope = (-((t - mid) / width).powi(2)).exp();
                let a = swing_amplitude_rad
                    * envelope
                    * (2.0 * std::f64::consts::PI * swing_frequency_hz * t).sin();
                // smoothstep ramp for the body travel
                let u = (t / spec.duration_s).clamp(0.0, 1.0);
                let s = u * u * (3.0 - 2.0 * u);
                (a, -a * 0.6, Vector3::new(0.0, travel_m * s, 0.0))
            }
        };

        if arm_angle != 0.0 {
            swing_limb(
                &mut pose,
                joint::RIGHT_SHOULDER,
                &[joint::RIGHT_ELBOW, joint::RIGHT_WRIST],
                lateral,
                arm_angle,
            );
            swing_limb(
                &mut pose,
                joint::LEFT_SHOULDER,
                &[joint::LEFT_ELBOW, joint::LEFT_WRIST],
                lateral,
                -arm_angle,
            );
        }
        if leg_angle != 0.0 {
            swing_limb(
                &mut pose,
                joint::RIGHT_HIP,
                &[joint::RIGHT_KNEE, joint::RIGHT_ANKLE],
                lateral,
                leg_angle,
            );
            swing_limb(
                &mut pose,
                joint::LEFT_HIP,
                &[joint::LEFT_KNEE, joint::LEFT_ANKLE],
                lateral,
                -leg_angle,
            );
        }

        let offset = Vector3::new(spec.origin_xy[0], spec.origin_xy[1], 0.0) + shift;
        let mut out = [[0.0; 3]; JOINT_COUNT];
        for (dst, src) in out.iter_mut().zip(pose) {
            *dst = (src + offset).into();
        }
        frames.push(out);
    }
    PoseSequence::new(spec.sample_rate_hz, frames)
}

/// Confidence assignment: clean detections draw from one range, corrupted
/// (swapped) detections from a lower, disjoint one, which makes
/// confidence-based pruning testable in both regimes.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ConfidenceModel {
    pub clean_range: (f64, f64),
    pub corrupted_range: (f64, f64),
}

impl Default for ConfidenceModel {
    fn default() -> Self {
        ConfidenceModel {
            clean_range: (0.8, 1.0),
            corrupted_range: (0.0, 0.4),
        }
    }
}

/// A deterministic left/right exchange applied to one camera's stream.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ForcedSwap {
    pub camera_id: String,
    /// Either joint of the mirror pair to exchange.
    pub joint: usize,
    /// Inclusive frame range; `None` means every frame.
    pub frame_range: Option<(usize, usize)>,
}

/// Detector-error model applied when rendering keypoints.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    /// Isotropic Gaussian pixel noise on every surviving detection.
    pub pixel_noise_sigma: f64,
    /// Probability a mirror pair is exchanged, per camera and frame.
    pub swap_probability: f64,
    /// Probability a detection is dropped, per joint, camera and frame.
    pub dropout_probability: f64,
    pub confidence: ConfidenceModel,
    pub seed: u64,
    pub forced_swaps: Vec<ForcedSwap>,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            pixel_noise_sigma: 0.0,
            swap_probability: 0.0,
            dropout_probability: 0.0,
            confidence: ConfidenceModel::default(),
            seed: 0,
            forced_swaps: Vec::new(),
        }
    }
}

impl CorruptionSpec {
    pub fn validate(&self, rig: &CameraRig, skeleton: &Skeleton) -> Result<()> {
        if !(self.pixel_noise_sigma >= 0.0) {
            return Err(Error::spec("pixel_noise_sigma", "must be >= 0"));
        }
        for (name, p) in [
            ("swap_probability", self.swap_probability),
            ("dropout_probability", self.dropout_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::spec(name, format!("probability {p} outside [0, 1]")));
            }
        }
        for (name, (lo, hi)) in [
            ("confidence.clean_range", self.confidence.clean_range),
            ("confidence.corrupted_range", self.confidence.corrupted_range),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(Error::spec(name, "range must satisfy 0 <= lo <= hi <= 1"));
            }
        }
        for fs in &self.forced_swaps {
            if rig.index_of(&fs.camera_id).is_none() {
                return Err(Error::spec(
                    "forced_swaps.camera_id",
                    format!("camera `{}` not in rig", fs.camera_id),
                ));
            }
            if fs.joint >= JOINT_COUNT || skeleton.mirror_of(fs.joint) == fs.joint {
                return Err(Error::spec(
                    "forced_swaps.joint",
                    format!("joint {} has no left/right counterpart", fs.joint),
                ));
            }
        }
        Ok(())
    }
}

/// What the corruption model did, for oracle-side bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    Swapped,
    Dropped,
}

#[derive(Debug, Clone)]
pub struct CorruptionEvent {
    pub frame_index: usize,
    pub camera_index: usize,
    pub joint: usize,
    pub kind: CorruptionKind,
}

/// Stable 64-bit FNV-1a, used to derive per-camera RNG streams from the
/// scene seed independent of camera order.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Project the ground truth through the rig and corrupt it.
///
/// Joints behind a camera are an error unless dropout is enabled, in which
/// case they are dropped like any missed detection. The output is fully
/// deterministic given the spec.
pub fn render_keypoints(
    gt: &PoseSequence,
    rig: &CameraRig,
    corruption: &CorruptionSpec,
) -> Result<(Vec<KeypointFrame>, Vec<CorruptionEvent>)> {
    let skeleton = Skeleton::coco17();
    corruption.validate(rig, &skeleton)?;
    gt.validate()?;

    let mirror_pairs: Vec<(usize, usize)> = (0..JOINT_COUNT)
        .filter(|&j| skeleton.mirror_of(j) > j)
        .map(|j| (j, skeleton.mirror_of(j)))
        .collect();

    let mut streams = Vec::with_capacity(rig.len() * gt.frames.len());
    let mut events = Vec::new();
    for (ci, cam) in rig.cameras().iter().enumerate() {
        let mut rng =
            ChaCha8Rng::seed_from_u64(corruption.seed ^ fnv1a(cam.camera_id.as_bytes()));
        let noise = if corruption.pixel_noise_sigma > 0.0 {
            Some(Normal::new(0.0, corruption.pixel_noise_sigma).unwrap())
        } else {
            None
        };
        let forced: Vec<(usize, Option<(usize, usize)>)> = corruption
            .forced_swaps
            .iter()
            .filter(|fs| fs.camera_id == cam.camera_id)
            .map(|fs| (fs.joint.min(skeleton.mirror_of(fs.joint)), fs.frame_range))
            .collect();

        for (t, frame) in gt.frames.iter().enumerate() {
            let mut pixels: [Option<[f64; 2]>; JOINT_COUNT] = [None; JOINT_COUNT];
            let mut corrupted = [false; JOINT_COUNT];
            for (j, p) in frame.iter().enumerate() {
                match project(cam, *p, true) {
                    Ok(px) => pixels[j] = Some(px),
                    Err(e) => {
                        if corruption.dropout_probability > 0.0 {
                            events.push(CorruptionEvent {
                                frame_index: t,
                                camera_index: ci,
                                joint: j,
                                kind: CorruptionKind::Dropped,
                            });
                        } else {
                            return Err(e);
                        }
                    }
                }
            }

            // left/right exchanges: forced swaps first, then the coin flips
            for &(lo, range) in &forced {
                let active = range.map_or(true, |(a, b)| t >= a && t <= b);
                if active {
                    let hi = skeleton.mirror_of(lo);
                    pixels.swap(lo, hi);
                    corrupted[lo] = true;
                    corrupted[hi] = true;
                }
            }
            if corruption.swap_probability > 0.0 {
                for &(lo, hi) in &mirror_pairs {
                    if rng.random::<f64>() < corruption.swap_probability {
                        pixels.swap(lo, hi);
                        corrupted[lo] = true;
                        corrupted[hi] = true;
                    }
                }
            }
            for j in 0..JOINT_COUNT {
                if corrupted[j] && pixels[j].is_some() {
                    events.push(CorruptionEvent {
                        frame_index: t,
                        camera_index: ci,
                        joint: j,
                        kind: CorruptionKind::Swapped,
                    });
                }
            }

            if corruption.dropout_probability > 0.0 {
                for (j, px) in pixels.iter_mut().enumerate() {
                    if px.is_some() && rng.random::<f64>() < corruption.dropout_probability {
                        *px = None;
                        events.push(CorruptionEvent {
                            frame_index: t,
                            camera_index: ci,
                            joint: j,
                            kind: CorruptionKind::Dropped,
                        });
                    }
                }
            }

            let mut keypoints: [Option<Keypoint2D>; JOINT_COUNT] = [None; JOINT_COUNT];
            for j in 0..JOINT_COUNT {
                let Some(mut px) = pixels[j] else { continue };
                if let Some(noise) = &noise {
                    px[0] += noise.sample(&mut rng);
                    px[1] += noise.sample(&mut rng);
                }
                let (lo, hi) = if corrupted[j] {
                    corruption.confidence.corrupted_range
                } else {
                    corruption.confidence.clean_range
                };
                let confidence = if hi > lo { rng.random_range(lo..hi) } else { lo };
                keypoints[j] = Some(Keypoint2D {
                    u: px[0],
                    v: px[1],
                    confidence,
                });
            }
            streams.push(KeypointFrame {
                camera_id: cam.camera_id.clone(),
                frame_index: t,
                keypoints,
            });
        }
    }
    Ok((streams, events))
}

/// A complete synthetic capture: rig, ground truth, corrupted detections.
#[derive(Debug, Clone)]
pub struct Scene {
    pub rig: CameraRig,
    pub ground_truth: PoseSequence,
    pub keypoints: Vec<KeypointFrame>,
    pub corruption_log: Vec<CorruptionEvent>,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub rig: RigSpec,
    #[serde(default)]
    pub motion: MotionSpec,
    #[serde(default)]
    pub corruption: CorruptionSpec,
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene> {
    let rig = make_rig(&spec.rig)?;
    let ground_truth = gen_motion(&spec.motion)?;
    let (keypoints, corruption_log) = render_keypoints(&ground_truth, &rig, &spec.corruption)?;
    Ok(Scene {
        rig,
        ground_truth,
        keypoints,
        corruption_log,
    })
}
