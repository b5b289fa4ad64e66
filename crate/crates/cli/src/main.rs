//! Batch front end for the multi-view capture toolkit.
//!
//! Subcommands mirror the pipeline stages: `calibrate` a rig from board
//! correspondences, `reconstruct` 3D poses from 2D keypoint streams,
//! `evaluate` against ground truth (optionally via a marker offset model),
//! `stats` for dataset statistics, `synth` for synthetic scene bundles, and
//! `fit-offsets` to learn marker-to-joint transformations.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mvcap_core::alignment::{
    apply_offset, fit_joint_offset, select_marker_triple, JointOffsetEntry, JointOffsetModel,
    TriadObservation,
};
use mvcap_core::calibrate::{bundle_adjust, zhang_init, BundleFixMask, BundleOptions};
use mvcap_core::geometry::{triangulate_linear, CameraParams, CameraRig};
use mvcap_core::metrics::{
    cdf, joint_kinematics, local_movement_curve, pose_error, subsample_frames, AlignmentMode,
    LimbChain, LocalMovementConfig,
};
use mvcap_core::model::{joint, PoseSequence, Skeleton, JOINT_COUNT};
use mvcap_core::selector::{
    select_trajectories_with_diagnostics, PruneConfig, SelectorConfig,
};
use mvcap_core::smoothing::{smooth_sequence_with, FilterSpec, SmoothingMode};
use mvcap_core::synth::{make_scene, SceneSpec};
use mvcap_core::{io as files, Error};

#[derive(Parser)]
#[command(name = "mvcap", version, about = "Markerless multi-view pose toolkit")]
struct Cli {
    /// Seed override for randomized steps (synthesis, subsampling).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-joint and per-channel parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Pipeline config file (JSON); command-line flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a rig: Zhang linear init per camera, then bundle adjustment.
    Calibrate(CalibrateArgs),
    /// Reconstruct 3D poses from keypoint streams.
    Reconstruct(ReconstructArgs),
    /// Evaluate predicted poses against ground truth.
    Evaluate(EvaluateArgs),
    /// Speed/acceleration CDFs and local-movement statistics.
    Stats(StatsArgs),
    /// Generate a synthetic scene bundle.
    Synth(SynthArgs),
    /// Fit per-joint marker-triad offset models.
    FitOffsets(FitOffsetsArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Rig-level planar correspondences: [{camera_id, views: [[[bx,by,u,v],..],..]}].
    /// View index v is the same physical board pose for every camera.
    #[arg(long)]
    correspondences: PathBuf,
    /// Identified world-point observations: [{camera_id, point_id, pixel}].
    #[arg(long)]
    observations: PathBuf,
    /// Output rig file.
    #[arg(long)]
    out: PathBuf,
    /// Bundle adjustment iteration budget.
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Write per-frame selection diagnostics to this CSV.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Skip the Butterworth smoothing stage.
    #[arg(long)]
    skip_smoothing: bool,
    /// Bridge short per-joint detection gaps by linear interpolation.
    #[arg(long)]
    interpolate_gaps: bool,
    /// Butterworth order per pass.
    #[arg(long)]
    order: Option<usize>,
    /// Low-pass cutoff in Hz.
    #[arg(long)]
    cutoff_hz: Option<f64>,
    /// Apply the filter causally once instead of zero-phase.
    #[arg(long)]
    single_pass: bool,
    /// Prune cameras below this 2D confidence.
    #[arg(long)]
    confidence_threshold: Option<f64>,
    /// Remove at most this many cameras per frame and joint.
    #[arg(long)]
    max_removed: Option<usize>,
    /// Capture rate of the keypoint stream.
    #[arg(long)]
    sample_rate_hz: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted pose sequence.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth pose sequence (alternative to --markers).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Marker capture to convert into ground truth via --offset-model.
    #[arg(long, requires = "offset_model")]
    markers: Option<PathBuf>,
    /// Offset model fitted by `fit-offsets`.
    #[arg(long)]
    offset_model: Option<PathBuf>,
    /// Metrics CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label for the sequence column.
    #[arg(long, default_value = "sequence")]
    sequence_name: String,
}

#[derive(Args)]
struct StatsArgs {
    /// Pose sequence files (statistics pool over all of them).
    #[arg(long = "pose", required = true)]
    poses: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Random frame subsample size applied before the local-movement metric.
    #[arg(long)]
    subsample: Option<usize>,
    /// Resolutions in the local-movement sweep.
    #[arg(long, default_value_t = 20)]
    resolutions: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Scene spec JSON (rig, motion and corruption); defaults when omitted.
    #[arg(long)]
    scene_spec: Option<PathBuf>,
}

#[derive(Args)]
struct FitOffsetsArgs {
    /// Marker calibration capture.
    #[arg(long)]
    markers: PathBuf,
    /// Markerless joints of the same capture (equal frame count).
    #[arg(long)]
    joints: PathBuf,
    /// Manual triple override: {joint_name: [m1, m2, m3]}.
    #[arg(long = "override")]
    override_table: Option<PathBuf>,
    /// Output offset-model file.
    #[arg(long)]
    out: PathBuf,
}

/// File-of-record pipeline configuration; flags override fields.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
struct PipelineConfig {
    sample_rate_hz: f64,
    confidence_threshold: f64,
    max_removed: usize,
    interpolate_gaps: bool,
    max_gap: usize,
    order: usize,
    cutoff_hz: f64,
    skip_smoothing: bool,
    single_pass: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            sample_rate_hz: 90.0,
            confidence_threshold: 0.5,
            max_removed: 2,
            interpolate_gaps: false,
            max_gap: 5,
            order: 4,
            cutoff_hz: 6.0,
            skip_smoothing: false,
            single_pass: false,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // a late second call would fail; the pool is configured exactly once
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Reconstruct(args) => cmd_reconstruct(args, config),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Stats(args) => cmd_stats(args, cli.seed),
        Command::Synth(args) => cmd_synth(args, cli.seed),
        Command::FitOffsets(args) => cmd_fit_offsets(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening config {}", p.display()))?;
            serde_json::from_reader(file).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

// ------------------------------------------------------------ calibrate ----

fn cmd_calibrate(args: CalibrateArgs) -> Result<()> {
    let per_camera = files::load_rig_correspondences(&args.correspondences)?;
    let observations = files::load_observations(&args.observations)?;

    // linear stage: intrinsics and the pose of board view 0 per camera;
    // the world frame is the board at view 0
    let mut cameras = Vec::with_capacity(per_camera.len());
    for (camera_id, set) in &per_camera {
        let init = zhang_init(set)
            .map_err(|e| anyhow::anyhow!("camera `{camera_id}`: {e}"))?;
        let (rotation, translation) = init.view_poses[0];
        cameras.push(CameraParams {
            camera_id: camera_id.clone(),
            fx: init.fx,
            fy: init.fy,
            cx: init.cx,
            cy: init.cy,
            k1: 0.0,
            k2: 0.0,
            rotation,
            translation,
            image_size: [1920, 1200],
        });
    }
    let initial_rig = CameraRig::new(cameras)?;

    // initial world points triangulated from the linear rig
    let n_points = observations
        .iter()
        .map(|o| o.point_id + 1)
        .max()
        .context("no observations")?;
    let mut points = Vec::with_capacity(n_points);
    for pid in 0..n_points {
        let views: Vec<(&CameraParams, [f64; 2])> = observations
            .iter()
            .filter(|o| o.point_id == pid)
            .filter_map(|o| initial_rig.by_id(&o.camera_id).map(|c| (c, o.pixel)))
            .collect();
        if views.len() < 2 {
            bail!("point {pid} is observed by {} cameras; need 2", views.len());
        }
        points.push(triangulate_linear(&views)?.point);
    }

    let fix = BundleFixMask::first_camera_gauge(&initial_rig);
    let opts = BundleOptions {
        max_iterations: args.max_iterations,
        ..Default::default()
    };
    let result = bundle_adjust(&initial_rig, &observations, &points, &fix, &opts)?;
    files::save_rig(&result.rig, &args.out)?;
    println!(
        "mean reprojection error: {:.6} px over {} observations ({} cameras, {} iterations)",
        result.mean_reprojection_px,
        observations.len(),
        result.rig.len(),
        result.iterations
    );
    Ok(())
}

// ---------------------------------------------------------- reconstruct ----

fn cmd_reconstruct(args: ReconstructArgs, config: PipelineConfig) -> Result<()> {
    for (a, b, what) in [
        (&args.rig, &args.keypoints, "rig and keypoint"),
        (&args.rig, &args.out, "rig and output"),
        (&args.keypoints, &args.out, "keypoint and output"),
    ] {
        if a == b {
            bail!("{what} paths must be distinct");
        }
    }

    let rig = files::load_rig(&args.rig)?;
    let streams = files::load_keypoints(&args.keypoints)?;

    let selector_cfg = SelectorConfig {
        prune: PruneConfig {
            confidence_threshold: args
                .confidence_threshold
                .unwrap_or(config.confidence_threshold),
            max_removed: args.max_removed.unwrap_or(config.max_removed),
        },
        interpolate_gaps: args.interpolate_gaps || config.interpolate_gaps,
        max_gap: config.max_gap,
    };
    let sample_rate = args.sample_rate_hz.unwrap_or(config.sample_rate_hz);

    let (selected, diagnostics) =
        select_trajectories_with_diagnostics(&streams, &rig, &selector_cfg, sample_rate)?;

    let skip_smoothing = args.skip_smoothing || config.skip_smoothing;
    let output = if skip_smoothing {
        selected
    } else {
        let spec = FilterSpec::new(
            args.order.unwrap_or(config.order),
            args.cutoff_hz.unwrap_or(config.cutoff_hz),
            sample_rate,
        )?;
        let mode = if args.single_pass || config.single_pass {
            SmoothingMode::SinglePass
        } else {
            SmoothingMode::ZeroPhase
        };
        smooth_sequence_with(&selected, &spec, mode)?
    };
    files::save_pose_sequence(&output, &args.out)?;

    if let Some(diag_path) = &args.diagnostics {
        let mut w = writer(diag_path)?;
        writeln!(w, "frame,joint,subset_bitmask,cost_increment")?;
        for d in &diagnostics {
            writeln!(
                w,
                "{},{},{},{}",
                d.frame_index, d.joint, d.subset_bitmask, d.cost_increment
            )?;
        }
        w.flush()?;
    }
    println!(
        "reconstructed {} frames x {} joints -> {}",
        output.frames.len(),
        JOINT_COUNT,
        args.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------- evaluate ----

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let pred = files::load_pose_sequence(&args.pred)?;
    let gt = match (&args.gt, &args.markers) {
        (Some(gt_path), None) => files::load_pose_sequence(gt_path)?,
        (None, Some(markers_path)) => {
            let model_path = args.offset_model.as_ref().expect("clap enforces the pair");
            let markers = files::load_marker_sequence(markers_path)?;
            let model = files::load_offset_model(model_path)?;
            apply_offset(&model, &markers, &Skeleton::coco17())?
        }
        (Some(_), Some(_)) => bail!("give either --gt or --markers, not both"),
        (None, None) => bail!("ground truth required: --gt or --markers with --offset-model"),
    };

    let mean = pose_error(&pred, &gt, AlignmentMode::Identity)?;
    let mpjpe = pose_error(&pred, &gt, AlignmentMode::HipTranslation)?;
    let pa = pose_error(&pred, &gt, AlignmentMode::ProcrustesSimilarity)?;

    let skeleton = Skeleton::coco17();
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(writer(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "sequence,joint,mean_error_mm,mpjpe_mm,pa_mpjpe_mm")?;
    for j in 0..JOINT_COUNT {
        writeln!(
            out,
            "{},{},{},{},{}",
            args.sequence_name,
            skeleton.joint_names[j],
            mean.per_joint_mm[j],
            mpjpe.per_joint_mm[j],
            pa.per_joint_mm[j]
        )?;
    }
    writeln!(
        out,
        "{},overall,{},{},{}",
        args.sequence_name, mean.overall_mm, mpjpe.overall_mm, pa.overall_mm
    )?;
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- stats ----

fn cmd_stats(args: StatsArgs, seed: Option<u64>) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let sequences: Vec<PoseSequence> = args
        .poses
        .iter()
        .map(files::load_pose_sequence)
        .collect::<std::result::Result<_, Error>>()?;

    let groups: [(&str, Vec<usize>); 3] = [
        ("wrist", vec![joint::LEFT_WRIST, joint::RIGHT_WRIST]),
        ("ankle", vec![joint::LEFT_ANKLE, joint::RIGHT_ANKLE]),
        ("hip", vec![joint::LEFT_HIP, joint::RIGHT_HIP]),
    ];

    let mut means = BTreeMap::new();
    for (name, joints) in &groups {
        let mut speed_samples = Vec::new();
        let mut accel_samples = Vec::new();
        for seq in &sequences {
            let kin = joint_kinematics(seq, joints)?;
            speed_samples.extend(kin.speed.iter().flatten().copied());
            accel_samples.extend(kin.acceleration.iter().flatten().copied());
        }
        for (quantity, samples) in [("speed", &speed_samples), ("accel", &accel_samples)] {
            let summary = cdf(samples)?;
            let path = args.out_dir.join(format!("{quantity}_cdf_{name}.csv"));
            let mut w = writer(&path)?;
            writeln!(w, "value,cumulative_fraction")?;
            for (v, f) in summary.values.iter().zip(&summary.fractions) {
                writeln!(w, "{v},{f}")?;
            }
            w.flush()?;
            means.insert((name.to_string(), quantity.to_string()), summary.mean);
        }
    }
    let mut w = writer(&args.out_dir.join("cdf_means.csv"))?;
    writeln!(w, "group,quantity,mean")?;
    for ((g, q), m) in &means {
        writeln!(w, "{g},{q},{m}")?;
    }
    w.flush()?;

    // local movement per chain, pooled over (possibly subsampled) sequences
    let mut auc_w = writer(&args.out_dir.join("local_movement_auc.csv"))?;
    writeln!(auc_w, "sequence,chain,auc")?;
    for (chain, chain_name) in [(LimbChain::Wrist, "wrist"), (LimbChain::Ankle, "ankle")] {
        for (seq, path) in sequences.iter().zip(&args.poses) {
            let pooled = match args.subsample {
                Some(n) => subsample_frames(seq, n, seed.unwrap_or(0)),
                None => seq.clone(),
            };
            let mut cfg = LocalMovementConfig::new(chain);
            cfg.n_resolutions = args.resolutions;
            let curve = local_movement_curve(&pooled, &cfg)?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "sequence".into());
            let curve_path = args
                .out_dir
                .join(format!("local_movement_{chain_name}_{label}.csv"));
            let mut w = writer(&curve_path)?;
            writeln!(w, "voxel_side_ratio,cover_ratio")?;
            for (s, r) in curve.sides.iter().zip(&curve.cover_ratios) {
                writeln!(w, "{s},{r}")?;
            }
            w.flush()?;
            writeln!(auc_w, "{label},{chain_name},{}", curve.auc)?;
        }
    }
    auc_w.flush()?;
    println!("statistics written to {}", args.out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------- synth ----

fn cmd_synth(args: SynthArgs, seed: Option<u64>) -> Result<()> {
    let mut spec: SceneSpec = match &args.scene_spec {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(f).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = seed {
        spec.corruption.seed = seed;
    }
    let scene = make_scene(&spec)?;

    std::fs::create_dir_all(&args.out_dir)?;
    files::save_rig(&scene.rig, args.out_dir.join("rig.json"))?;
    files::save_keypoints(&scene.keypoints, args.out_dir.join("keypoints.jsonl"))?;
    files::save_pose_sequence(&scene.ground_truth, args.out_dir.join("gt_pose.json"))?;
    let manifest = File::create(args.out_dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(manifest), &spec)?;
    println!(
        "scene bundle in {}: {} cameras, {} frames, {} corruption events",
        args.out_dir.display(),
        scene.rig.len(),
        scene.ground_truth.frames.len(),
        scene.corruption_log.len()
    );
    Ok(())
}

// ---------------------------------------------------------- fit-offsets ----

fn cmd_fit_offsets(args: FitOffsetsArgs) -> Result<()> {
    let markers = files::load_marker_sequence(&args.markers)?;
    let joints_seq = files::load_pose_sequence(&args.joints)?;
    if markers.len() != joints_seq.frames.len() {
        bail!(
            "marker capture has {} frames, joints {}",
            markers.len(),
            joints_seq.frames.len()
        );
    }
    let overrides: BTreeMap<String, [String; 3]> = match &args.override_table {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(f).with_context(|| format!("parsing {}", p.display()))?
        }
        None => BTreeMap::new(),
    };

    let skeleton = Skeleton::coco17();
    let mut model = JointOffsetModel::default();
    println!("joint,m1,m2,m3,rms_residual_m,used_frames");
    for (j, name) in skeleton.joint_names.iter().enumerate() {
        let track: Vec<[f64; 3]> = joints_seq.frames.iter().map(|f| f[j]).collect();
        let triple: [usize; 3] = match overrides.get(*name) {
            Some(names) => {
                let mut idx = [0usize; 3];
                for (k, m) in names.iter().enumerate() {
                    idx[k] = markers
                        .marker_index(m)
                        .with_context(|| format!("override marker `{m}` not in sequence"))?;
                }
                idx
            }
            None => select_marker_triple(&markers, &track)
                .map_err(|e| anyhow::anyhow!("joint `{name}`: {e}"))?,
        };

        let mut observations = Vec::with_capacity(markers.len());
        let mut mask = Vec::with_capacity(markers.len());
        for (frame, joint_pos) in markers.frames.iter().zip(&track) {
            let triad = (frame[triple[0]], frame[triple[1]], frame[triple[2]]);
            match triad {
                (Some(m1), Some(m2), Some(m3)) => {
                    observations.push(TriadObservation {
                        m1,
                        m2,
                        m3,
                        joint: *joint_pos,
                    });
                    mask.push(true);
                }
                _ => {
                    observations.push(TriadObservation {
                        m1: [0.0; 3],
                        m2: [0.0; 3],
                        m3: [0.0; 3],
                        joint: *joint_pos,
                    });
                    mask.push(false);
                }
            }
        }
        let fit = fit_joint_offset(&observations, Some(&mask))
            .map_err(|e| anyhow::anyhow!("joint `{name}`: {e}"))?;
        println!(
            "{name},{},{},{},{},{}",
            markers.marker_names[triple[0]],
            markers.marker_names[triple[1]],
            markers.marker_names[triple[2]],
            fit.rms_residual_m,
            fit.used_frames
        );
        model.joints.insert(
            name.to_string(),
            JointOffsetEntry {
                markers: [
                    markers.marker_names[triple[0]].clone(),
                    markers.marker_names[triple[1]].clone(),
                    markers.marker_names[triple[2]].clone(),
                ],
                w: fit.weights,
            },
        );
    }
    files::save_offset_model(&model, &args.out)?;
    println!("offset model written to {}", args.out.display());
    Ok(())
}
