//! End-to-end tests driving the `mvcap` binary: synth -> reconstruct ->
//! evaluate round trips, calibration from rendered board views, offset
//! fitting, statistics reports, determinism and error paths.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvcap_core::alignment::local_frame;
use mvcap_core::calibrate::Observation3D;
use mvcap_core::geometry::{project, CameraRig};
use mvcap_core::io as files;
use mvcap_core::model::{MarkerSequence, PoseSequence, JOINT_COUNT};
use mvcap_core::synth::{make_rig, IntrinsicsTemplate, RigSpec};
use nalgebra::{Rotation3, Vector3};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mvcap"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn mvcap");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth_scene(dir: &Path, spec_json: Option<&str>, seed: Option<u64>) {
    let mut cmd = bin();
    cmd.arg("synth").arg("--out-dir").arg(dir);
    if let Some(spec) = spec_json {
        let p = dir.join("scene_spec.json");
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(&p, spec).unwrap();
        cmd.arg("--scene-spec").arg(&p);
    }
    if let Some(seed) = seed {
        cmd.arg("--seed").arg(seed.to_string());
    }
    run_ok(&mut cmd);
}

fn reconstruct(dir: &Path, out: &Path, extra: &[&str]) {
    let mut cmd = bin();
    cmd.arg("reconstruct")
        .arg("--rig")
        .arg(dir.join("rig.json"))
        .arg("--keypoints")
        .arg(dir.join("keypoints.jsonl"))
        .arg("--out")
        .arg(out);
    for e in extra {
        cmd.arg(e);
    }
    run_ok(&mut cmd);
}

/// Parse the evaluate CSV and return (mean, mpjpe, pa-mpjpe) of the overall row.
fn overall_errors(csv: &str) -> (f64, f64, f64) {
    let row = csv
        .lines()
        .find(|l| l.contains(",overall,"))
        .expect("overall row");
    let cols: Vec<&str> = row.split(',').collect();
    (
        cols[2].parse().unwrap(),
        cols[3].parse().unwrap(),
        cols[4].parse().unwrap(),
    )
}

#[test]
fn noiseless_synth_reconstruct_evaluate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    // small rig and short clip keep the dense candidate set cheap
    synth_scene(
        &scene,
        Some(
            r#"{"rig": {"camera_count": 4, "ring_radius_m": 3.0, "heights_m": [1.2, 2.5],
                 "look_at": [0.0, 0.0, 1.0],
                 "intrinsics": {"fx": 1100.0, "fy": 1100.0, "cx": 960.0, "cy": 600.0, "k1": -0.05, "k2": 0.01},
                 "image_size": [1920, 1200]},
                "motion": {"duration_s": 0.5, "sample_rate_hz": 90.0,
                 "kind": {"LimbSwing": {"frequency_hz": 1.0, "amplitude_rad": 0.4}},
                 "dims": {"shoulder_width": 0.38, "hip_width": 0.24, "torso_height": 0.52,
                  "upper_arm": 0.28, "forearm": 0.26, "thigh": 0.42, "shank": 0.42, "hip_height": 0.92},
                 "origin_xy": [0.0, 0.0]}}"#,
        ),
        None,
    );

    let pose = tmp.path().join("pose.json");
    reconstruct(&scene, &pose, &["--skip-smoothing"]);

    let out = run_ok(
        bin()
            .arg("evaluate")
            .arg("--pred")
            .arg(&pose)
            .arg("--gt")
            .arg(scene.join("gt_pose.json")),
    );
    let (mean, mpjpe, pa) = overall_errors(&String::from_utf8_lossy(&out.stdout));
    assert!(mean < 1e-6, "mean error {mean} mm");
    assert!(mpjpe < 1e-6 && pa < 1e-6);
}

#[test]
fn skip_smoothing_bypasses_the_filter_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth_scene(
        &scene,
        Some(r#"{"rig": {"camera_count": 3}, "motion": {"duration_s": 0.5}}"#),
        None,
    );
    let raw = tmp.path().join("raw.json");
    let smoothed = tmp.path().join("smoothed.json");
    let raw2 = tmp.path().join("raw2.json");
    reconstruct(&scene, &raw, &["--skip-smoothing"]);
    reconstruct(&scene, &smoothed, &[]);
    reconstruct(&scene, &raw2, &["--skip-smoothing"]);

    let a = std::fs::read(&raw).unwrap();
    let b = std::fs::read(&smoothed).unwrap();
    let c = std::fs::read(&raw2).unwrap();
    assert_ne!(a, b, "smoothing must change a dynamic sequence");
    assert_eq!(a, c, "identical inputs give byte-identical outputs");
}

#[test]
fn reconstruction_is_independent_of_stream_order() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth_scene(
        &scene,
        Some(r#"{"rig": {"camera_count": 3}, "motion": {"duration_s": 0.4}}"#),
        None,
    );
    // reverse the keypoint lines on disk
    let kp_path = scene.join("keypoints.jsonl");
    let text = std::fs::read_to_string(&kp_path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.reverse();
    std::fs::write(&kp_path, lines.join("\n")).unwrap();

    let pose_rev = tmp.path().join("rev.json");
    reconstruct(&scene, &pose_rev, &["--skip-smoothing"]);

    std::fs::write(&kp_path, &text).unwrap();
    let pose_fwd = tmp.path().join("fwd.json");
    reconstruct(&scene, &pose_fwd, &["--skip-smoothing"]);

    assert_eq!(
        std::fs::read(&pose_fwd).unwrap(),
        std::fs::read(&pose_rev).unwrap()
    );
}

#[test]
fn synth_is_deterministic_under_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = r#"{"rig": {"camera_count": 3}, "motion": {"duration_s": 0.3},
        "corruption": {"pixel_noise_sigma": 2.0, "swap_probability": 0.05,
                       "dropout_probability": 0.02,
                       "confidence": {"clean_range": [0.8, 1.0], "corrupted_range": [0.0, 0.4]},
                       "seed": 0, "forced_swaps": []}}"#;
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth_scene(&a, Some(spec), Some(42));
    synth_scene(&b, Some(spec), Some(42));
    for name in ["rig.json", "keypoints.jsonl", "gt_pose.json"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} must be bit-identical under the same seed"
        );
    }
}

#[test]
fn missing_input_fails_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("reconstruct")
        .arg("--rig")
        .arg(tmp.path().join("nope.json"))
        .arg("--keypoints")
        .arg(tmp.path().join("also_nope.jsonl"))
        .arg("--out")
        .arg(tmp.path().join("out.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());

    let out = bin()
        .arg("synth")
        .arg("--out-dir")
        .arg(tmp.path().join("x"))
        .arg("--scene-spec")
        .arg(tmp.path().join("missing_spec.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn single_camera_scene_spec_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = {
        let dir = tmp.path().join("scene");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("spec.json");
        std::fs::write(&p, r#"{"rig": {"camera_count": 1}}"#).unwrap();
        bin()
            .arg("synth")
            .arg("--out-dir")
            .arg(&dir)
            .arg("--scene-spec")
            .arg(&p)
            .output()
            .unwrap()
    };
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("camera_count"), "stderr: {stderr}");
}

/// Render synchronized planar board views and a world-point cloud through a
/// known rig, giving cmd_calibrate a full synthetic calibration problem.
fn write_calibration_inputs(
    dir: &Path,
    pixel_sigma: f64,
) -> (PathBuf, PathBuf) {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    // zero-distortion rig: the linear stage assumes an undistorted model
    let rig = make_rig(&RigSpec {
        camera_count: 4,
        intrinsics: IntrinsicsTemplate {
            k1: 0.0,
            k2: 0.0,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, pixel_sigma.max(1e-12)).unwrap();
    let mut jitter = move |px: [f64; 2]| -> [f64; 2] {
        if pixel_sigma > 0.0 {
            [px[0] + noise.sample(&mut rng), px[1] + noise.sample(&mut rng)]
        } else {
            px
        }
    };

    // five tilted board poses near the capture center
    let board_poses: Vec<(Rotation3<f64>, Vector3<f64>)> = [
        (0.4, 0.1, 0.0, 0.0, 0.0, 1.0),
        (-0.3, 0.3, 0.1, 0.1, -0.1, 1.1),
        (0.2, -0.4, -0.1, -0.1, 0.1, 0.9),
        (-0.2, -0.2, 0.3, 0.05, 0.1, 1.2),
        (0.35, 0.25, -0.2, -0.05, -0.05, 1.05),
    ]
    .iter()
    .map(|&(rx, ry, rz, tx, ty, tz)| {
        (
            Rotation3::from_euler_angles(rx, ry, rz),
            Vector3::new(tx, ty, tz),
        )
    })
    .collect();

    let mut per_camera = Vec::new();
    for cam in rig.cameras() {
        let mut views = Vec::new();
        for (rot, t) in &board_poses {
            let mut points = Vec::new();
            for i in 0..6 {
                for j in 0..6 {
                    let board = [i as f64 * 0.06 - 0.15, j as f64 * 0.06 - 0.15];
                    let world = rot * Vector3::new(board[0], board[1], 0.0) + t;
                    let px = project(cam, world.into(), true).unwrap();
                    points.push((board, jitter(px)));
                }
            }
            views.push(mvcap_core::calibrate::PlanarView { points });
        }
        per_camera.push((
            cam.camera_id.clone(),
            mvcap_core::calibrate::PlanarObservationSet { views },
        ));
    }
    let corr_path = dir.join("correspondences.json");
    files::save_rig_correspondences(&per_camera, &corr_path).unwrap();

    // shared world points for the bundle stage
    let mut observations = Vec::new();
    let mut pid = 0usize;
    for (rot, t) in &board_poses {
        for i in 0..6 {
            for j in 0..6 {
                let board = Vector3::new(i as f64 * 0.06 - 0.15, j as f64 * 0.06 - 0.15, 0.0);
                let world = rot * board + t;
                for cam in rig.cameras() {
                    let px = project(cam, world.into(), true).unwrap();
                    observations.push(Observation3D {
                        camera_id: cam.camera_id.clone(),
                        point_id: pid,
                        pixel: jitter(px),
                    });
                }
                pid += 1;
            }
        }
    }
    let obs_path = dir.join("observations.json");
    files::save_observations(&observations, &obs_path).unwrap();
    (corr_path, obs_path)
}

fn calibrate_and_report(dir: &Path, sigma: f64) -> (f64, CameraRig) {
    let (corr, obs) = write_calibration_inputs(dir, sigma);
    let out_path = dir.join("rig_out.json");
    let out = run_ok(
        bin()
            .arg("calibrate")
            .arg("--correspondences")
            .arg(&corr)
            .arg("--observations")
            .arg(&obs)
            .arg("--out")
            .arg(&out_path),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line = stdout
        .lines()
        .find(|l| l.starts_with("mean reprojection error:"))
        .expect("report line");
    let err: f64 = line
        .split_whitespace()
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    (err, files::load_rig(&out_path).unwrap())
}

#[test]
fn calibrate_noiseless_reaches_zero_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (err, rig) = calibrate_and_report(tmp.path(), 0.0);
    assert!(err < 1e-8, "mean reprojection error {err} px");
    assert_eq!(rig.len(), 4);
}

#[test]
fn calibrate_with_noise_stays_subpixel() {
    let tmp = tempfile::tempdir().unwrap();
    let (err, _) = calibrate_and_report(tmp.path(), 0.5);
    assert!(err < 1.0, "mean reprojection error {err} px");
    assert!(err > 0.1, "noise floor should be visible, got {err}");
}

/// A tumbling rigid triad with every joint pinned in its local frame, saved
/// as marker + pose files for the offset-fitting flow.
fn write_offset_fixture(dir: &Path, frames: usize, tumbling: bool) -> (PathBuf, PathBuf) {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l1 = Vector3::new(0.0, 0.0, 0.0);
    let l2 = Vector3::new(0.09, 0.0, 0.0);
    let l3 = Vector3::new(0.02, 0.07, 0.0);

    let mut marker_frames = Vec::new();
    let mut pose_frames = Vec::new();
    for k in 0..frames {
        let rot = if tumbling {
            Rotation3::new(Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ))
        } else {
            Rotation3::identity()
        };
        let t = Vector3::new(0.0, 0.0, 1.0) * (1.0 + 0.001 * k as f64);
        let m1 = rot * l1 + t;
        let m2 = rot * l2 + t;
        let m3 = rot * l3 + t;
        marker_frames.push(vec![
            Some(m1.into()),
            Some(m2.into()),
            Some(m3.into()),
        ]);
        let lf = local_frame(m1.into(), m2.into(), m3.into()).unwrap();
        let mut pose = [[0.0; 3]; JOINT_COUNT];
        for (j, p) in pose.iter_mut().enumerate() {
            let w = Vector3::new(0.01 * j as f64, 0.02, -0.01);
            *p = (lf.basis * w + lf.origin).into();
        }
        pose_frames.push(pose);
    }
    let markers = MarkerSequence::new(
        90.0,
        vec!["m1".into(), "m2".into(), "m3".into()],
        marker_frames,
    )
    .unwrap();
    let joints = PoseSequence::new(90.0, pose_frames).unwrap();
    let markers_path = dir.join("markers.json");
    let joints_path = dir.join("joints.json");
    files::save_marker_sequence(&markers, &markers_path).unwrap();
    files::save_pose_sequence(&joints, &joints_path).unwrap();
    (markers_path, joints_path)
}

#[test]
fn fit_offsets_then_evaluate_against_markers() {
    let tmp = tempfile::tempdir().unwrap();
    let (markers, joints) = write_offset_fixture(tmp.path(), 120, true);
    let model_path = tmp.path().join("offsets.json");
    let out = run_ok(
        bin()
            .arg("fit-offsets")
            .arg("--markers")
            .arg(&markers)
            .arg("--joints")
            .arg(&joints)
            .arg("--out")
            .arg(&model_path),
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    // residual column of every joint row should be ~0
    for line in stdout.lines().skip(1).filter(|l| l.contains(",m")) {
        let rms: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(rms < 1e-9, "joint fit rms {rms} in {line}");
    }

    let out = run_ok(
        bin()
            .arg("evaluate")
            .arg("--pred")
            .arg(&joints)
            .arg("--markers")
            .arg(&markers)
            .arg("--offset-model")
            .arg(&model_path),
    );
    let (mean, _, _) = overall_errors(&String::from_utf8_lossy(&out.stdout));
    assert!(mean < 1e-6, "overall mean error {mean} mm");
}

#[test]
fn fit_offsets_rejects_static_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let (markers, joints) = write_offset_fixture(tmp.path(), 30, false);
    let out = bin()
        .arg("fit-offsets")
        .arg("--markers")
        .arg(&markers)
        .arg("--joints")
        .arg(&joints)
        .arg("--out")
        .arg(tmp.path().join("model.json"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("orientation"), "stderr: {stderr}");
}

#[test]
fn stats_on_constant_velocity_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    synth_scene(
        &scene,
        Some(
            r#"{"rig": {"camera_count": 2},
                "motion": {"duration_s": 1.0,
                           "kind": {"Linear": {"velocity": [1.0, 0.0, 0.0]}}}}"#,
        ),
        None,
    );
    let stats_dir = tmp.path().join("stats");
    run_ok(
        bin()
            .arg("stats")
            .arg("--pose")
            .arg(scene.join("gt_pose.json"))
            .arg("--out-dir")
            .arg(&stats_dir),
    );
    let speed_csv = std::fs::read_to_string(stats_dir.join("speed_cdf_hip.csv")).unwrap();
    for line in speed_csv.lines().skip(1) {
        let v: f64 = line.split(',').next().unwrap().parse().unwrap();
        assert!((v - 1.0).abs() < 1e-9, "speed sample {v}");
    }
    let means = std::fs::read_to_string(stats_dir.join("cdf_means.csv")).unwrap();
    let hip_speed = means
        .lines()
        .find(|l| l.starts_with("hip,speed"))
        .unwrap();
    let mean: f64 = hip_speed.split(',').nth(2).unwrap().parse().unwrap();
    assert!((mean - 1.0).abs() < 1e-9);
    assert!(stats_dir.join("local_movement_auc.csv").exists());
}
