//! Evaluation metrics and dataset statistics.
//!
//! Pose accuracy follows the three-alignment protocol: per-frame error under
//! the identity transform (mean error), after hip translation (MPJPE), and
//! after a full Procrustes similarity (PA-MPJPE), averaged over frames then
//! joints, reported in millimeters. Dataset statistics cover joint
//! speed/acceleration distributions and the local-movement metric: the
//! voxel cover ratio of wrist/ankle positions expressed in body-local
//! frames, integrated over log-spaced voxel resolutions.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{joint, Point3, PoseSequence, JOINT_COUNT};

/// The transform family applied to predictions before measuring error
/// (the evaluation protocol's tau).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    /// No alignment: the raw mean error.
    Identity,
    /// Translate so the mid-hip points coincide (MPJPE).
    HipTranslation,
    /// Per-frame similarity from Procrustes analysis (PA-MPJPE).
    ProcrustesSimilarity,
}

/// A similarity transform y ~ scale * rotation * x + translation.
#[derive(Debug, Clone)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn apply(&self, p: Point3) -> Point3 {
        (self.scale * (self.rotation * Vector3::from(p)) + self.translation).into()
    }
}

/// Closed-form least-squares similarity between two point sets (Umeyama),
/// with det(R) = +1 enforced. Needs at least three non-collinear valid
/// points.
pub fn procrustes_similarity(
    source: &[Point3],
    target: &[Point3],
    mask: Option<&[bool]>,
) -> Result<SimilarityTransform> {
    if source.len() != target.len() {
        return Err(Error::Shape(format!(
            "source has {} points, target {}",
            source.len(),
            target.len()
        )));
    }
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = source
        .iter()
        .zip(target)
        .enumerate()
        .filter(|(i, _)| mask.map_or(true, |m| m[*i]))
        .map(|(_, (s, t))| (Vector3::from(*s), Vector3::from(*t)))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::arity("procrustes points", 3, pairs.len()));
    }
    let n = pairs.len() as f64;
    let mu_s: Vector3<f64> = pairs.iter().map(|(s, _)| s).sum::<Vector3<f64>>() / n;
    let mu_t: Vector3<f64> = pairs.iter().map(|(_, t)| t).sum::<Vector3<f64>>() / n;

    let mut sigma = Matrix3::<f64>::zeros();
    let mut var_s = 0.0;
    for (s, t) in &pairs {
        let ds = s - mu_s;
        let dt = t - mu_t;
        sigma += dt * ds.transpose();
        var_s += ds.norm_squared();
    }
    sigma /= n;
    var_s /= n;
    if var_s <= 0.0 {
        return Err(Error::Degeneracy("source points coincide".into()));
    }

    let svd = sigma.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = &svd.singular_values;
    if !(d[1] > 1e-12 * d[0].max(1e-300)) {
        return Err(Error::Degeneracy(
            "points are collinear; similarity transform not unique".into(),
        ));
    }
    let sign = if (u * vt).determinant() < 0.0 { -1.0 } else { 1.0 };
    let s_mat = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = u * s_mat * vt;
    let scale = (d[0] + d[1] + sign * d[2]) / var_s;
    let translation = mu_t - scale * (rotation * mu_s);
    Ok(SimilarityTransform {
        rotation,
        scale,
        translation,
    })
}

/// Per-joint and overall position errors in millimeters.
#[derive(Debug, Clone)]
pub struct PoseErrorReport {
    pub per_joint_mm: [f64; JOINT_COUNT],
    pub overall_mm: f64,
}

fn mid_hip(frame: &[Point3; JOINT_COUNT]) -> Vector3<f64> {
    (Vector3::from(frame[joint::LEFT_HIP]) + Vector3::from(frame[joint::RIGHT_HIP])) / 2.0
}

/// Evaluate `pred` against `gt` under the chosen alignment, averaging the
/// per-frame joint distances over frames, then over joints.
pub fn pose_error(
    pred: &PoseSequence,
    gt: &PoseSequence,
    mode: AlignmentMode,
) -> Result<PoseErrorReport> {
    if pred.frames.len() != gt.frames.len() {
        return Err(Error::Shape(format!(
            "prediction has {} frames, ground truth {}",
            pred.frames.len(),
            gt.frames.len()
        )));
    }
    let t_len = pred.frames.len();
    let mut per_joint = [0.0f64; JOINT_COUNT];
    for (pf, gf) in pred.frames.iter().zip(&gt.frames) {
        let aligned: [Point3; JOINT_COUNT] = match mode {
            AlignmentMode::Identity => *pf,
            AlignmentMode::HipTranslation => {
                let shift = mid_hip(gf) - mid_hip(pf);
                let mut out = *pf;
                for p in &mut out {
                    *p = (Vector3::from(*p) + shift).into();
                }
                out
            }
            AlignmentMode::ProcrustesSimilarity => {
                let tf = procrustes_similarity(pf, gf, None)?;
                let mut out = *pf;
                for p in &mut out {
                    *p = tf.apply(*p);
                }
                out
            }
        };
        for j in 0..JOINT_COUNT {
            per_joint[j] += (Vector3::from(aligned[j]) - Vector3::from(gf[j])).norm();
        }
    }
    for v in &mut per_joint {
        *v *= 1000.0 / t_len as f64;
    }
    let overall = per_joint.iter().sum::<f64>() / JOINT_COUNT as f64;
    Ok(PoseErrorReport {
        per_joint_mm: per_joint,
        overall_mm: overall,
    })
}

/// Per-frame speed (m/s) and acceleration magnitude (m/s^2) for a joint
/// subset, by central finite differences (one-sided at the ends).
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub joints: Vec<usize>,
    /// speed[t][k] is the speed of joints[k] at frame t.
    pub speed: Vec<Vec<f64>>,
    pub acceleration: Vec<Vec<f64>>,
}

pub fn joint_kinematics(seq: &PoseSequence, joints: &[usize]) -> Result<Kinematics> {
    let t_len = seq.frames.len();
    if t_len < 3 {
        return Err(Error::Length(format!(
            "kinematics needs at least 3 frames, got {t_len}"
        )));
    }
    for &j in joints {
        if j >= JOINT_COUNT {
            return Err(Error::Shape(format!("joint index {j} out of range")));
        }
    }
    let fs = seq.sample_rate_hz;
    let pos = |t: usize, j: usize| Vector3::from(seq.frames[t][j]);

    let mut speed = vec![vec![0.0; joints.len()]; t_len];
    let mut acceleration = vec![vec![0.0; joints.len()]; t_len];
    for (k, &j) in joints.iter().enumerate() {
        for t in 0..t_len {
            let v = if t == 0 {
                (pos(1, j) - pos(0, j)) * fs
            } else if t == t_len - 1 {
                (pos(t, j) - pos(t - 1, j)) * fs
            } else {
                (pos(t + 1, j) - pos(t - 1, j)) * (fs / 2.0)
            };
            let a = if t == 0 {
                (pos(2, j) - pos(1, j) * 2.0 + pos(0, j)) * (fs * fs)
            } else if t == t_len - 1 {
                (pos(t, j) - pos(t - 1, j) * 2.0 + pos(t - 2, j)) * (fs * fs)
            } else {
                (pos(t + 1, j) - pos(t, j) * 2.0 + pos(t - 1, j)) * (fs * fs)
            };
            speed[t][k] = v.norm();
            acceleration[t][k] = a.norm();
        }
    }
    Ok(Kinematics {
        joints: joints.to_vec(),
        speed,
        acceleration,
    })
}

/// Empirical cumulative distribution with its mean.
#[derive(Debug, Clone)]
pub struct CdfSummary {
    /// Sample values, ascending.
    pub values: Vec<f64>,
    /// Cumulative fractions, (i+1)/n per sorted sample.
    pub fractions: Vec<f64>,
    pub mean: f64,
}

pub fn cdf(samples: &[f64]) -> Result<CdfSummary> {
    let mut values: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return Err(Error::arity("cdf samples", 1, 0));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let fractions = (0..n).map(|i| (i + 1) as f64 / n as f64).collect();
    let mean = values.iter().sum::<f64>() / n as f64;
    Ok(CdfSummary {
        values,
        fractions,
        mean,
    })
}

/// Which extremum joints the local frame targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimbChain {
    Wrist,
    Ankle,
}

/// Which body side anchors the local frame (the other side is mirrored in).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FrameSide {
    #[default]
    Right,
    Left,
}

/// Extremum joints in body-local coordinates, mirrored and merged, with
/// positions normalized by limb length.
#[derive(Debug, Clone)]
pub struct LocalizedJoints {
    /// Two points per frame: the anchor-side joint, then the mirrored
    /// opposite-side joint, in units of limb length.
    pub points: Vec<Point3>,
    /// Median summed segment length (meters) used for normalization.
    pub limb_length_m: f64,
}

struct ChainJoints {
    anchor_r: usize,
    anchor_l: usize,
    mid_r: usize,
    mid_l: usize,
    end_r: usize,
    end_l: usize,
}

fn chain_joints(chain: LimbChain) -> ChainJoints {
    match chain {
        LimbChain::Wrist => ChainJoints {
            anchor_r: joint::RIGHT_SHOULDER,
            anchor_l: joint::LEFT_SHOULDER,
            mid_r: joint::RIGHT_ELBOW,
            mid_l: joint::LEFT_ELBOW,
            end_r: joint::RIGHT_WRIST,
            end_l: joint::LEFT_WRIST,
        },
        LimbChain::Ankle => ChainJoints {
            anchor_r: joint::RIGHT_HIP,
            anchor_l: joint::LEFT_HIP,
            mid_r: joint::RIGHT_KNEE,
            mid_l: joint::LEFT_KNEE,
            end_r: joint::RIGHT_ANKLE,
            end_l: joint::LEFT_ANKLE,
        },
    }
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Change of basis per frame: origin at the anchor-side shoulder (or hip),
/// x along the shoulder (hip) axis pointing out of the anchor side, the
/// torso axis lying in the xz-plane, y completing a right-handed frame.
/// Opposite-side joints are evaluated in the frame anchored at their own
/// shoulder (hip) and mirrored across the yz-plane into the anchor frame.
pub fn to_local_frame(
    seq: &PoseSequence,
    chain: LimbChain,
    side: FrameSide,
) -> Result<LocalizedJoints> {
    let cj = chain_joints(chain);
    let (anchor_a, anchor_b, end_a, end_b) = match side {
        FrameSide::Right => (cj.anchor_r, cj.anchor_l, cj.end_r, cj.end_l),
        FrameSide::Left => (cj.anchor_l, cj.anchor_r, cj.end_l, cj.end_r),
    };

    // limb length: median over frames and both sides of the summed segments
    let mut lengths = Vec::with_capacity(2 * seq.frames.len());
    for f in &seq.frames {
        let seg = |a: usize, b: usize| (Vector3::from(f[a]) - Vector3::from(f[b])).norm();
        lengths.push(seg(cj.anchor_r, cj.mid_r) + seg(cj.mid_r, cj.end_r));
        lengths.push(seg(cj.anchor_l, cj.mid_l) + seg(cj.mid_l, cj.end_l));
    }
    let limb_length = median(&mut lengths);
    if !(limb_length > 0.0) {
        return Err(Error::Degeneracy("limb has zero length".into()));
    }

    let mut points = Vec::with_capacity(2 * seq.frames.len());
    for (t, f) in seq.frames.iter().enumerate() {
        let pa = Vector3::from(f[anchor_a]);
        let pb = Vector3::from(f[anchor_b]);
        let axis = pa - pb;
        if axis.norm() < 1e-12 {
            return Err(Error::Degeneracy(format!(
                "frame {t}: anchor joints coincide; local frame undefined"
            )));
        }
        let x = axis.normalize();
        // torso direction: hip-to-shoulder for wrists, shoulder-to-hip for ankles
        let mid_shoulder = (Vector3::from(f[joint::LEFT_SHOULDER])
            + Vector3::from(f[joint::RIGHT_SHOULDER]))
            / 2.0;
        let mid_hip =
            (Vector3::from(f[joint::LEFT_HIP]) + Vector3::from(f[joint::RIGHT_HIP])) / 2.0;
        let torso = match chain {
            LimbChain::Wrist => mid_shoulder - mid_hip,
            LimbChain::Ankle => mid_hip - mid_shoulder,
        };
        let z_raw = torso - x * torso.dot(&x);
        if z_raw.norm() < 1e-12 {
            return Err(Error::Degeneracy(format!(
                "frame {t}: torso axis parallel to the anchor axis"
            )));
        }
        let z = z_raw.normalize();
        let y = z.cross(&x);

        let local = |p: Vector3<f64>, origin: Vector3<f64>| -> Vector3<f64> {
            let d = p - origin;
            Vector3::new(x.dot(&d), y.dot(&d), z.dot(&d))
        };
        let primary = local(Vector3::from(f[end_a]), pa) / limb_length;
        let mut mirrored = local(Vector3::from(f[end_b]), pb) / limb_length;
        mirrored.x = -mirrored.x;
        points.push(primary.into());
        points.push(mirrored.into());
    }
    Ok(LocalizedJoints {
        points,
        limb_length_m: limb_length,
    })
}

/// Fraction of distinct voxels occupied by the localized points: unique
/// voxel count divided by the point count (2F, mirroring included). The
/// grid is corner-anchored at the local origin with sides aligned to the
/// basis vectors.
pub fn cover_ratio(points: &[Point3], voxel_side: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    unique_voxel_count(points, voxel_side) as f64 / points.len() as f64
}

fn unique_voxel_count(points: &[Point3], voxel_side: f64) -> usize {
    assert!(voxel_side > 0.0, "voxel side must be positive");
    let mut voxels: HashSet<(i64, i64, i64)> = HashSet::with_capacity(points.len());
    for p in points {
        voxels.insert((
            (p[0] / voxel_side).floor() as i64,
            (p[1] / voxel_side).floor() as i64,
            (p[2] / voxel_side).floor() as i64,
        ));
    }
    voxels.len()
}

/// Resolution sweep for the local-movement metric.
#[derive(Debug, Clone)]
pub struct LocalMovementConfig {
    pub n_resolutions: usize,
    /// Largest voxel side as a fraction of limb length.
    pub max_ratio: f64,
    /// Smallest voxel side as a fraction of limb length.
    pub min_ratio: f64,
    pub chain: LimbChain,
    pub side: FrameSide,
}

impl LocalMovementConfig {
    pub fn new(chain: LimbChain) -> Self {
        LocalMovementConfig {
            n_resolutions: 20,
            max_ratio: 1.0,
            min_ratio: 0.001,
            chain,
            side: FrameSide::Right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_resolutions < 2 {
            return Err(Error::spec("n_resolutions", "need at least 2 resolutions"));
        }
        if !(self.min_ratio > 0.0 && self.max_ratio > self.min_ratio) {
            return Err(Error::spec(
                "ratios",
                "side-length ratios must satisfy max > min > 0",
            ));
        }
        Ok(())
    }

    /// Log-spaced voxel sides from `max_ratio` down to `min_ratio`.
    pub fn sides(&self) -> Vec<f64> {
        let n = self.n_resolutions;
        let (lo, hi) = (self.min_ratio.ln(), self.max_ratio.ln());
        (0..n)
            .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }
}

/// The cover-ratio curve over the resolution sweep and its area under the
/// curve (mean of the cover ratios, the paper's AUC-divided-by-n).
#[derive(Debug, Clone)]
pub struct LocalMovementCurve {
    pub sides: Vec<f64>,
    pub cover_ratios: Vec<f64>,
    pub auc: f64,
}

pub fn local_movement_curve(
    seq: &PoseSequence,
    cfg: &LocalMovementConfig,
) -> Result<LocalMovementCurve> {
    cfg.validate()?;
    let localized = to_local_frame(seq, cfg.chain, cfg.side)?;
    let sides = cfg.sides();
    // integer voxel counts keep the ratios and their mean exact rationals
    let counts: Vec<usize> = sides
        .iter()
        .map(|s| unique_voxel_count(&localized.points, *s))
        .collect();
    let n_points = localized.points.len();
    let cover_ratios: Vec<f64> = counts.iter().map(|&u| u as f64 / n_points as f64).collect();
    let auc = counts.iter().sum::<usize>() as f64 / (sides.len() * n_points) as f64;
    Ok(LocalMovementCurve {
        sides,
        cover_ratios,
        auc,
    })
}

pub fn local_movement_auc(seq: &PoseSequence, cfg: &LocalMovementConfig) -> Result<f64> {
    local_movement_curve(seq, cfg).map(|c| c.auc)
}

/// Uniform frame subsample with a fixed seed (the random-subset protocol
/// for cross-dataset comparisons). Selected frames keep temporal order.
pub fn subsample_frames(seq: &PoseSequence, n: usize, seed: u64) -> PoseSequence {
    if n >= seq.frames.len() || n == 0 {
        return seq.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..seq.frames.len()).collect();
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx.sort_unstable();
    PoseSequence {
        sample_rate_hz: seq.sample_rate_hz,
        frames: idx.into_iter().map(|i| seq.frames[i]).collect(),
    }
}
