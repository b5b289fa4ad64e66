//! Trajectory selection over camera-subset candidates.
//!
//! For every frame and joint, each camera subset of size two or more yields
//! one triangulated 3D candidate. Candidates form the layers of a directed
//! acyclic graph, one layer per frame, densely connected between consecutive
//! layers with Euclidean-distance edge weights. The shortest source-to-sink
//! path picks one candidate per frame, favoring temporal continuity.
//! Low-confidence cameras (up to a configured count) are removed per frame
//! before candidates are built.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{triangulate_linear, triangulate_refined, CameraRig};
use crate::model::{Keypoint2D, KeypointFrame, PoseSequence, Skeleton, JOINT_COUNT};

/// One triangulated candidate: the camera subset it came from, its position,
/// and the mean 2D confidence of the contributing detections (diagnostic).
#[derive(Debug, Clone)]
pub struct CandidateNode {
    pub frame_index: usize,
    /// Rig camera indices, ascending.
    pub subset: Vec<usize>,
    pub position: [f64; 3],
    pub aggregate_confidence: f64,
}

/// All candidates for one frame (one DAG layer).
#[derive(Debug, Clone)]
pub struct CandidateLayer {
    pub frame_index: usize,
    pub nodes: Vec<CandidateNode>,
}

/// Confidence-based camera removal policy.
#[derive(Debug, Clone, Copy)]
pub struct PruneConfig {
    /// Cameras with confidence below this take part in removal.
    pub confidence_threshold: f64,
    /// At most this many cameras are removed per frame and joint.
    pub max_removed: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            confidence_threshold: 0.5,
            max_removed: 2,
        }
    }
}

/// Enumerate all subsets of size >= 2 in deterministic order: by size, then
/// lexicographically within each size. For K elements this is exactly
/// 2^K - K - 1 subsets.
pub fn enumerate_subsets<T: Ord + Clone>(active: &[T]) -> Result<Vec<Vec<T>>> {
    if active.len() < 2 {
        return Err(Error::arity("subset enumeration", 2, active.len()));
    }
    let mut sorted = active.to_vec();
    sorted.sort();
    let k = sorted.len();
    let mut out = Vec::with_capacity((1usize << k) - k - 1);
    for size in 2..=k {
        let mut idx: Vec<usize> = (0..size).collect();
        'combos: loop {
            out.push(idx.iter().map(|&i| sorted[i].clone()).collect());
            // advance to the next combination in lexicographic order
            let mut i = size;
            loop {
                if i == 0 {
                    break 'combos;
                }
                i -= 1;
                if idx[i] != i + k - size {
                    idx[i] += 1;
                    for j in i + 1..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Remove the lowest-confidence cameras among those below the threshold,
/// at most `max_removed`, never leaving fewer than two. Ties break by
/// camera id order. Returns retained ids in input order.
pub fn prune_cameras<'a>(
    confidences: &[(&'a str, f64)],
    cfg: &PruneConfig,
) -> Vec<&'a str> {
    let k = confidences.len();
    let budget = cfg.max_removed.min(k.saturating_sub(2));
    let mut candidates: Vec<(&str, f64)> = confidences
        .iter()
        .filter(|(_, c)| *c < cfg.confidence_threshold)
        .map(|(id, c)| (*id, *c))
        .collect();
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let removed: std::collections::BTreeSet<&str> = candidates
        .into_iter()
        .take(budget)
        .map(|(id, _)| id)
        .collect();
    confidences
        .iter()
        .map(|(id, _)| *id)
        .filter(|id| !removed.contains(id))
        .collect()
}

/// Detections of one joint at one frame: (rig camera index, keypoint).
pub type JointDetections = Vec<(usize, Keypoint2D)>;

/// Build one candidate layer per frame for a single joint.
///
/// Input is indexed by frame offset; `frames[t]` holds all cameras that
/// detected the joint at frame `frame_offset + t`. A frame with fewer than
/// two detections is a gap error naming the frame.
pub fn build_layers(
    frames: &[JointDetections],
    rig: &CameraRig,
    cfg: &PruneConfig,
    frame_offset: usize,
) -> Result<Vec<CandidateLayer>> {
    frames
        .iter()
        .enumerate()
        .map(|(t, dets)| build_layer(dets, rig, cfg, frame_offset + t))
        .collect()
}

fn build_layer(
    detections: &JointDetections,
    rig: &CameraRig,
    cfg: &PruneConfig,
    frame_index: usize,
) -> Result<CandidateLayer> {
    if detections.len() < 2 {
        return Err(Error::Gap {
            frame: frame_index,
            joint: None,
            message: format!(
                "{} detections; triangulation needs at least 2",
                detections.len()
            ),
        });
    }
    let cams = rig.cameras();
    let confidences: Vec<(&str, f64)> = detections
        .iter()
        .map(|(ci, kp)| (cams[*ci].camera_id.as_str(), kp.confidence))
        .collect();
    let retained = prune_cameras(&confidences, cfg);
    let subsets = enumerate_subsets(&retained)?;

    let mut nodes = Vec::with_capacity(subsets.len());
    for subset in subsets {
        let members: Vec<(usize, Keypoint2D)> = subset
            .iter()
            .map(|id| {
                let ci = rig.index_of(id).expect("retained id comes from the rig");
                let kp = detections
                    .iter()
                    .find(|(c, _)| *c == ci)
                    .expect("retained id had a detection")
                    .1;
                (ci, kp)
            })
            .collect();
        let obs: Vec<(&crate::geometry::CameraParams, [f64; 2])> = members
            .iter()
            .map(|(ci, kp)| (&cams[*ci], [kp.u, kp.v]))
            .collect();
        let linear = triangulate_linear(&obs)?;
        let refined = triangulate_refined(&obs, linear.point)?;
        let aggregate_confidence =
            members.iter().map(|(_, kp)| kp.confidence).sum::<f64>() / members.len() as f64;
        let mut subset_indices: Vec<usize> = members.iter().map(|(ci, _)| *ci).collect();
        subset_indices.sort_unstable();
        nodes.push(CandidateNode {
            frame_index,
            subset: subset_indices,
            position: refined.point,
            aggregate_confidence,
        });
    }
    Ok(CandidateLayer { frame_index, nodes })
}

/// Shortest layer-respecting path through the candidate DAG.
#[derive(Debug, Clone)]
pub struct ShortestPath {
    /// Selected node index per layer.
    pub indices: Vec<usize>,
    /// Sum of Euclidean edge weights along the path.
    pub cost: f64,
}

fn edge_weight(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Dynamic program over the layered DAG with a virtual zero-cost source and
/// sink. Ties break toward the lowest node index at every argmin, making the
/// selection reproducible.
pub fn shortest_path(layers: &[CandidateLayer]) -> Result<ShortestPath> {
    if layers.is_empty() {
        return Err(Error::Structure("no layers".into()));
    }
    for layer in layers {
        if layer.nodes.is_empty() {
            return Err(Error::Structure(format!(
                "empty candidate layer at frame {}",
                layer.frame_index
            )));
        }
    }

    let mut dist: Vec<f64> = vec![0.0; layers[0].nodes.len()];
    let mut parents: Vec<Vec<usize>> = Vec::with_capacity(layers.len().saturating_sub(1));
    for w in layers.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let mut ndist = vec![f64::INFINITY; next.nodes.len()];
        let mut nparent = vec![0usize; next.nodes.len()];
        for (j, node) in next.nodes.iter().enumerate() {
            for (i, pnode) in prev.nodes.iter().enumerate() {
                let cand = dist[i] + edge_weight(&pnode.position, &node.position);
                if cand < ndist[j] {
                    ndist[j] = cand;
                    nparent[j] = i;
                }
            }
        }
        parents.push(nparent);
        dist = ndist;
    }

    let mut best = 0usize;
    for (i, d) in dist.iter().enumerate() {
        if *d < dist[best] {
            best = i;
        }
    }
    let cost = dist[best];

    let mut indices = vec![0usize; layers.len()];
    indices[layers.len() - 1] = best;
    for t in (1..layers.len()).rev() {
        indices[t - 1] = parents[t - 1][indices[t]];
    }
    Ok(ShortestPath { indices, cost })
}

/// Full selector configuration.
#[derive(Debug, Clone)]
pub struct SelectorConfig {
    pub prune: PruneConfig,
    /// Bridge frames where a joint has fewer than two detections by linear
    /// interpolation, provided the gap is interior and short enough.
    pub interpolate_gaps: bool,
    /// Longest gap (frames) the interpolation bridges.
    pub max_gap: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            prune: PruneConfig::default(),
            interpolate_gaps: false,
            max_gap: 5,
        }
    }
}

/// One row of the optional diagnostic dump.
#[derive(Debug, Clone)]
pub struct DiagnosticRecord {
    pub frame_index: usize,
    pub joint: usize,
    /// Bit i set means rig camera i is in the selected subset; 0 marks an
    /// interpolated frame.
    pub subset_bitmask: u64,
    /// Edge cost from the previously selected node (0 at the first frame).
    pub cost_increment: f64,
}

/// Run the candidate/DAG selection independently per joint and assemble the
/// unsmoothed pose sequence.
pub fn select_trajectories(
    streams: &[KeypointFrame],
    rig: &CameraRig,
    cfg: &SelectorConfig,
    sample_rate_hz: f64,
) -> Result<PoseSequence> {
    select_trajectories_with_diagnostics(streams, rig, cfg, sample_rate_hz).map(|(seq, _)| seq)
}

pub fn select_trajectories_with_diagnostics(
    streams: &[KeypointFrame],
    rig: &CameraRig,
    cfg: &SelectorConfig,
    sample_rate_hz: f64,
) -> Result<(PoseSequence, Vec<DiagnosticRecord>)> {
    if streams.is_empty() {
        return Err(Error::arity("keypoint stream", 1, 0));
    }
    for s in streams {
        if rig.index_of(&s.camera_id).is_none() {
            return Err(Error::Config(format!(
                "keypoint stream references unknown camera `{}`",
                s.camera_id
            )));
        }
    }
    let first = streams.iter().map(|s| s.frame_index).min().unwrap();
    let last = streams.iter().map(|s| s.frame_index).max().unwrap();
    let t_len = last - first + 1;

    // (frame offset, camera) -> keypoints
    let mut grid: Vec<Vec<Option<&[Option<Keypoint2D>; JOINT_COUNT]>>> =
        vec![vec![None; rig.len()]; t_len];
    for s in streams {
        let ci = rig.index_of(&s.camera_id).unwrap();
        grid[s.frame_index - first][ci] = Some(&s.keypoints);
    }
    for (t, row) in grid.iter().enumerate() {
        if row.iter().all(|c| c.is_none()) {
            return Err(Error::Gap {
                frame: first + t,
                joint: None,
                message: "no camera has any detections for this frame".into(),
            });
        }
    }

    let skeleton = Skeleton::coco17();
    let per_joint: Vec<Result<(Vec<[f64; 3]>, Vec<DiagnosticRecord>)>> = (0..JOINT_COUNT)
        .into_par_iter()
        .map(|j| select_joint(j, &grid, rig, cfg, first, &skeleton))
        .collect();

    let mut frames = vec![[[0.0; 3]; JOINT_COUNT]; t_len];
    let mut diagnostics = Vec::new();
    for (j, res) in per_joint.into_iter().enumerate() {
        let (track, diag) = res?;
        for (t, p) in track.into_iter().enumerate() {
            frames[t][j] = p;
        }
        diagnostics.extend(diag);
    }
    diagnostics.sort_by_key(|d| (d.frame_index, d.joint));
    Ok((PoseSequence::new(sample_rate_hz, frames)?, diagnostics))
}

fn select_joint(
    j: usize,
    grid: &[Vec<Option<&[Option<Keypoint2D>; JOINT_COUNT]>>],
    rig: &CameraRig,
    cfg: &SelectorConfig,
    first: usize,
    skeleton: &Skeleton,
) -> Result<(Vec<[f64; 3]>, Vec<DiagnosticRecord>)> {
    let name = skeleton.joint_names[j];
    let t_len = grid.len();
    let detections: Vec<JointDetections> = grid
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter_map(|(ci, kps)| kps.and_then(|k| k[j].map(|kp| (ci, kp))))
                .collect()
        })
        .collect();

    let present: Vec<usize> = (0..t_len).filter(|&t| detections[t].len() >= 2).collect();
    let with_joint = |e: Error| match e {
        Error::Gap { frame, message, .. } => Error::Gap {
            frame,
            joint: Some(name.to_string()),
            message,
        },
        other => other,
    };

    if !cfg.interpolate_gaps {
        if let Some(t) = (0..t_len).find(|&t| detections[t].len() < 2) {
            return Err(with_joint(Error::Gap {
                frame: first + t,
                joint: None,
                message: format!(
                    "{} detections; triangulation needs at least 2",
                    detections[t].len()
                ),
            }));
        }
    } else {
        if present.is_empty() {
            return Err(with_joint(Error::Gap {
                frame: first,
                joint: None,
                message: "joint never has two detections".into(),
            }));
        }
        if present[0] != 0 || *present.last().unwrap() != t_len - 1 {
            let edge = if present[0] != 0 { 0 } else { t_len - 1 };
            return Err(with_joint(Error::Gap {
                frame: first + edge,
                joint: None,
                message: "gap at sequence boundary cannot be interpolated".into(),
            }));
        }
        for w in present.windows(2) {
            let gap = w[1] - w[0] - 1;
            if gap > cfg.max_gap {
                return Err(with_joint(Error::Gap {
                    frame: first + w[0] + 1,
                    joint: None,
                    message: format!("gap of {gap} frames exceeds the limit of {}", cfg.max_gap),
                }));
            }
        }
    }

    let layer_frames: Vec<JointDetections> = present
        .iter()
        .map(|&t| detections[t].clone())
        .collect();
    let layers = build_layers(&layer_frames, rig, &cfg.prune, 0)
        .map_err(|e| match e {
            Error::Gap { frame, message, .. } => Error::Gap {
                frame: first + present[frame],
                joint: Some(name.to_string()),
                message,
            },
            other => other,
        })?;
    let path = shortest_path(&layers)?;

    let mut track = vec![[0.0; 3]; t_len];
    let mut diag = Vec::with_capacity(t_len);
    let mut prev_pos: Option<[f64; 3]> = None;
    for (li, &t) in present.iter().enumerate() {
        let node = &layers[li].nodes[path.indices[li]];
        track[t] = node.position;
        let mask = node
            .subset
            .iter()
            .fold(0u64, |m, ci| m | (1 << ci));
        let inc = prev_pos.map_or(0.0, |p| edge_weight(&p, &node.position));
        diag.push(DiagnosticRecord {
            frame_index: first + t,
            joint: j,
            subset_bitmask: mask,
            cost_increment: inc,
        });
        prev_pos = Some(node.position);
    }
    // bridge interpolated gaps
    for w in present.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 > t0 + 1 {
            let (a, b) = (track[t0], track[t1]);
            for t in t0 + 1..t1 {
                let alpha = (t - t0) as f64 / (t1 - t0) as f64;
                for c in 0..3 {
                    track[t][c] = a[c] + alpha * (b[c] - a[c]);
                }
                diag.push(DiagnosticRecord {
                    frame_index: first + t,
                    joint: j,
                    subset_bitmask: 0,
                    cost_increment: 0.0,
                });
            }
        }
    }
    Ok((track, diag))
}
