//! Rig calibration: Zhang-style linear intrinsic initialization from planar
//! views, followed by Levenberg-Marquardt bundle adjustment over camera
//! parameters and world points.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{project, CameraParams, CameraRig};
use crate::model::Point3;

/// Board-plane to image correspondences for one view of the planar target.
/// Board points are meters in the target plane (z = 0), pixels are raw
/// image coordinates.
#[derive(Debug, Clone)]
pub struct PlanarView {
    pub points: Vec<([f64; 2], [f64; 2])>,
}

/// All views of the planar target seen by a single camera.
#[derive(Debug, Clone)]
pub struct PlanarObservationSet {
    pub views: Vec<PlanarView>,
}

/// Linear calibration estimate: shared intrinsics plus a board-to-camera
/// pose per view.
#[derive(Debug, Clone)]
pub struct ZhangInit {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Board-to-camera rotation and translation for each input view.
    pub view_poses: Vec<(Matrix3<f64>, Vector3<f64>)>,
}

/// Normalizing similarity for DLT conditioning: centroid to origin, mean
/// distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = [f64; 2]> + Clone) -> Matrix3<f64> {
    let mut n = 0usize;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points.clone() {
        mx += p[0];
        my += p[1];
        n += 1;
    }
    let n = n as f64;
    mx /= n;
    my /= n;
    let mut mean_dist = 0.0;
    for p in points {
        mean_dist += ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt();
    }
    mean_dist /= n;
    let s = if mean_dist > 0.0 {
        2.0_f64.sqrt() / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply_h(h: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = h * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Plane-to-image homography via the normalized DLT.
fn homography(view: &PlanarView) -> Result<Matrix3<f64>> {
    if view.points.len() < 4 {
        return Err(Error::arity("homography estimation", 4, view.points.len()));
    }
    let tb = normalizing_transform(view.points.iter().map(|(b, _)| *b));
    let tp = normalizing_transform(view.points.iter().map(|(_, p)| *p));

    let n = view.points.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 9);
    for (i, (board, pixel)) in view.points.iter().enumerate() {
        let [x, y] = apply_h(&tb, *board);
        let [u, v] = apply_h(&tp, *pixel);
        a.row_mut(2 * i).copy_from_slice(&[
            -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u,
        ]);
        a.row_mut(2 * i + 1).copy_from_slice(&[
            0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v,
        ]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Degeneracy("SVD failed".into()))?;
    let h = vt.row(vt.nrows() - 1);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tp_inv = tp
        .try_inverse()
        .ok_or_else(|| Error::Degeneracy("pixel normalization singular".into()))?;
    Ok(tp_inv * hn * tb)
}

/// The 6-vector v_ij of Zhang's absolute-conic constraints.
fn v_ij(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let hi = h.column(i);
    let hj = h.column(j);
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Linear intrinsic and per-view extrinsic estimation from planar views.
///
/// Homographies come from the normalized DLT, intrinsics from the
/// absolute-conic system, extrinsics from homography decomposition with the
/// rotation re-orthonormalized by SVD. Needs at least three views with
/// varied board orientations.
pub fn zhang_init(obs: &PlanarObservationSet) -> Result<ZhangInit> {
    if obs.views.len() < 3 {
        return Err(Error::Degeneracy(format!(
            "Zhang initialization needs >= 3 views, got {}",
            obs.views.len()
        )));
    }
    let homographies: Vec<Matrix3<f64>> =
        obs.views.iter().map(homography).collect::<Result<_>>()?;

    let m = homographies.len();
    let mut vmat = DMatrix::<f64>::zeros(2 * m, 6);
    for (k, h) in homographies.iter().enumerate() {
        let v12 = v_ij(h, 0, 1);
        let v11 = v_ij(h, 0, 0);
        let v22 = v_ij(h, 1, 1);
        for c in 0..6 {
            vmat[(2 * k, c)] = v12[c];
            vmat[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    let svd = vmat.svd(false, true);
    let sv = &svd.singular_values;
    // rank must be 5 for a unique conic; pure-translation view sets are not
    let s1 = sv[0];
    let s5 = sv[sv.len().min(6) - 2];
    if !(s5 > 1e-10 * s1) {
        return Err(Error::Degeneracy(
            "absolute-conic system is rank deficient (views too similar)".into(),
        ));
    }
    let vt = svd.v_t.ok_or_else(|| Error::Degeneracy("SVD failed".into()))?;
    let brow = vt.row(vt.nrows() - 1);
    let mut b = [brow[0], brow[1], brow[2], brow[3], brow[4], brow[5]];
    if b[0] < 0.0 {
        for c in &mut b {
            *c = -*c;
        }
    }
    let (b11, b12, b22, b13, b23, b33) = (b[0], b[1], b[2], b[3], b[4], b[5]);

    let denom = b11 * b22 - b12 * b12;
    if !(denom > 0.0) || !(b11 > 0.0) {
        return Err(Error::Degeneracy(
            "absolute-conic estimate not positive definite".into(),
        ));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if !(lambda > 0.0) {
        return Err(Error::Degeneracy("invalid conic scale".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / denom).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;

    // skew is estimated internally but assumed negligible in the camera model
    let kmtx = Matrix3::new(alpha, gamma, u0, 0.0, beta, v0, 0.0, 0.0, 1.0);
    let k_inv = kmtx
        .try_inverse()
        .ok_or_else(|| Error::Degeneracy("intrinsic matrix singular".into()))?;

    let mut view_poses = Vec::with_capacity(m);
    for h in &homographies {
        let mut h = *h;
        if (k_inv * h.column(2).into_owned())[2] < 0.0 {
            h = -h;
        }
        let r1 = k_inv * h.column(0).into_owned();
        let r2 = k_inv * h.column(1).into_owned();
        let scale = 2.0 / (r1.norm() + r2.norm());
        let r1 = r1 * scale;
        let r2 = r2 * scale;
        let r3 = r1.cross(&r2);
        let t = k_inv * h.column(2).into_owned() * scale;
        let r = Matrix3::from_columns(&[r1, r2, r3]);
        let svd = r.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let det = (u * vt).determinant();
        let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum())) * vt;
        view_poses.push((r, t));
    }

    Ok(ZhangInit {
        fx: alpha,
        fy: beta,
        cx: u0,
        cy: v0,
        view_poses,
    })
}

/// One image observation of an identified world point.
#[derive(Debug, Clone)]
pub struct Observation3D {
    pub camera_id: String,
    pub point_id: usize,
    pub pixel: [f64; 2],
}

/// Which parameter groups bundle adjustment holds fixed.
#[derive(Debug, Clone, Default)]
pub struct BundleFixMask {
    /// Cameras whose pose (rotation and translation) is frozen; freezing the
    /// first camera is the conventional gauge.
    pub fixed_camera_poses: Vec<String>,
    pub fix_intrinsics: bool,
    pub fix_distortion: bool,
    pub fix_points: bool,
}

impl BundleFixMask {
    /// Freeze the first camera's pose, leave everything else free.
    pub fn first_camera_gauge(rig: &CameraRig) -> Self {
        BundleFixMask {
            fixed_camera_poses: vec![rig.cameras()[0].camera_id.clone()],
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct BundleOptions {
    pub max_iterations: usize,
    pub lambda_init: f64,
    /// Stop when the relative cost decrease of an accepted step falls below
    /// this threshold.
    pub relative_cost_tol: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        BundleOptions {
            max_iterations: 200,
            lambda_init: 1e-3,
            relative_cost_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BundleResult {
    pub rig: CameraRig,
    pub points: Vec<Point3>,
    /// Arithmetic mean over observations of the reprojection residual norm,
    /// in pixels.
    pub mean_reprojection_px: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Column layout of one camera's free parameters.
#[derive(Debug, Clone, Copy, Default)]
struct CamCols {
    intr: Option<usize>,
    dist: Option<usize>,
    pose: Option<usize>,
}

struct BundleState {
    cameras: Vec<CameraParams>,
    points: Vec<Vector3<f64>>,
}

impl BundleState {
    fn apply_step(&self, step: &DVector<f64>, cols: &[CamCols], point_cols: &[Option<usize>]) -> BundleState {
        let mut cameras = self.cameras.clone();
        for (cam, c) in cameras.iter_mut().zip(cols) {
            if let Some(o) = c.intr {
                cam.fx += step[o];
                cam.fy += step[o + 1];
                cam.cx += step[o + 2];
                cam.cy += step[o + 3];
            }
            if let Some(o) = c.dist {
                cam.k1 += step[o];
                cam.k2 += step[o + 1];
            }
            if let Some(o) = c.pose {
                let omega = Vector3::new(step[o], step[o + 1], step[o + 2]);
                cam.rotation = nalgebra::Rotation3::new(omega).into_inner() * cam.rotation;
                cam.translation += Vector3::new(step[o + 3], step[o + 4], step[o + 5]);
            }
        }
        let mut points = self.points.clone();
        for (p, c) in points.iter_mut().zip(point_cols) {
            if let Some(o) = *c {
                *p += Vector3::new(step[o], step[o + 1], step[o + 2]);
            }
        }
        BundleState { cameras, points }
    }
}

fn total_cost(state: &BundleState, obs: &[(usize, usize, [f64; 2])]) -> Option<f64> {
    let mut cost = 0.0;
    for &(ci, pi, pixel) in obs {
        let proj = project(&state.cameras[ci], state.points[pi].into(), true).ok()?;
        let (du, dv) = (proj[0] - pixel[0], proj[1] - pixel[1]);
        cost += du * du + dv * dv;
    }
    Some(cost)
}

fn mean_residual_norm(state: &BundleState, obs: &[(usize, usize, [f64; 2])]) -> f64 {
    let mut sum = 0.0;
    for &(ci, pi, pixel) in obs {
        match project(&state.cameras[ci], state.points[pi].into(), true) {
            Ok(proj) => {
                let (du, dv) = (proj[0] - pixel[0], proj[1] - pixel[1]);
                sum += (du * du + dv * dv).sqrt();
            }
            Err(_) => return f64::INFINITY,
        }
    }
    sum / obs.len() as f64
}

/// Joint nonlinear refinement of camera parameters and world points by
/// Levenberg-Marquardt on the summed squared pixel residuals.
///
/// The objective is non-increasing across accepted steps; a rank-deficient
/// normal system is handled by increasing the damping, never by failing.
/// With a zero iteration budget the inputs are returned unchanged together
/// with their initial error.
pub fn bundle_adjust(
    rig: &CameraRig,
    observations: &[Observation3D],
    initial_points: &[Point3],
    fix: &BundleFixMask,
    opts: &BundleOptions,
) -> Result<BundleResult> {
    if observations.is_empty() {
        return Err(Error::arity("bundle adjustment observations", 1, 0));
    }
    // resolve camera indices and validate
    let mut obs = Vec::with_capacity(observations.len());
    let mut per_camera_points: Vec<std::collections::BTreeSet<usize>> =
        vec![Default::default(); rig.len()];
    for o in observations {
        let ci = rig.index_of(&o.camera_id).ok_or_else(|| {
            Error::Config(format!("observation references unknown camera `{}`", o.camera_id))
        })?;
        if o.point_id >= initial_points.len() {
            return Err(Error::Config(format!(
                "observation references point {} but only {} points given",
                o.point_id,
                initial_points.len()
            )));
        }
        per_camera_points[ci].insert(o.point_id);
        obs.push((ci, o.point_id, o.pixel));
    }
    for (ci, seen) in per_camera_points.iter().enumerate() {
        if seen.len() < 6 {
            return Err(Error::Config(format!(
                "camera `{}` observes {} points; bundle adjustment needs >= 6",
                rig.cameras()[ci].camera_id,
                seen.len()
            )));
        }
    }
    for id in &fix.fixed_camera_poses {
        if rig.index_of(id).is_none() {
            return Err(Error::Config(format!("fixed camera `{id}` not in rig")));
        }
    }

    // parameter layout
    let mut ncols = 0usize;
    let cols: Vec<CamCols> = rig
        .cameras()
        .iter()
        .map(|cam| {
            let mut c = CamCols::default();
            if !fix.fix_intrinsics {
                c.intr = Some(ncols);
                ncols += 4;
            }
            if !fix.fix_distortion {
                c.dist = Some(ncols);
                ncols += 2;
            }
            if !fix.fixed_camera_poses.contains(&cam.camera_id) {
                c.pose = Some(ncols);
                ncols += 6;
            }
            c
        })
        .collect();
    let point_cols: Vec<Option<usize>> = (0..initial_points.len())
        .map(|_| {
            if fix.fix_points {
                None
            } else {
                let o = ncols;
                ncols += 3;
                Some(o)
            }
        })
        .collect();

    let mut state = BundleState {
        cameras: rig.cameras().to_vec(),
        points: initial_points.iter().map(|p| Vector3::from(*p)).collect(),
    };
    let mut cost = total_cost(&state, &obs).ok_or_else(|| Error::Config(
        "initial geometry puts a point behind a camera".to_string(),
    ))?;

    let mut lambda = opts.lambda_init;
    let mut converged = false;
    let mut iterations = 0usize;

    'outer: for _ in 0..opts.max_iterations {
        iterations += 1;
        // accumulate the normal equations from per-observation blocks
        let mut h = DMatrix::<f64>::zeros(ncols, ncols);
        let mut g = DVector::<f64>::zeros(ncols);
        for &(ci, pi, pixel) in &obs {
            let cam = &state.cameras[ci];
            let pw = state.points[pi];
            let pc = cam.rotation * pw + cam.translation;
            if pc.z <= 0.0 {
                break 'outer; // cost stays at last accepted value
            }
            let (x, y) = (pc.x / pc.z, pc.y / pc.z);
            let r2 = x * x + y * y;
            let d = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2;
            let dd = cam.k1 + 2.0 * cam.k2 * r2;
            let (xd, yd) = (x * d, y * d);
            let residual = Vector2::new(
                cam.fx * xd + cam.cx - pixel[0],
                cam.fy * yd + cam.cy - pixel[1],
            );

            let iz = 1.0 / pc.z;
            let dn = Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
            let ddist =
                nalgebra::Matrix2::new(cam.fx * (d + 2.0 * x * x * dd), cam.fx * 2.0 * x * y * dd,
                                       cam.fy * 2.0 * x * y * dd, cam.fy * (d + 2.0 * y * y * dd));
            let jpc = ddist * dn;

            // (column index, 2-vector jacobian column) for each active parameter
            let mut jac: Vec<(usize, Vector2<f64>)> = Vec::with_capacity(15);
            let c = cols[ci];
            if let Some(o) = c.intr {
                jac.push((o, Vector2::new(xd, 0.0)));
                jac.push((o + 1, Vector2::new(0.0, yd)));
                jac.push((o + 2, Vector2::new(1.0, 0.0)));
                jac.push((o + 3, Vector2::new(0.0, 1.0)));
            }
            if let Some(o) = c.dist {
                jac.push((o, Vector2::new(cam.fx * x * r2, cam.fy * y * r2)));
                jac.push((o + 1, Vector2::new(cam.fx * x * r2 * r2, cam.fy * y * r2 * r2)));
            }
            if let Some(o) = c.pose {
                let jrot = jpc * (-(cam.rotation * pw).cross_matrix());
                for k in 0..3 {
                    jac.push((o + k, jrot.column(k).into_owned()));
                }
                for k in 0..3 {
                    jac.push((o + 3 + k, jpc.column(k).into_owned()));
                }
            }
            if let Some(o) = point_cols[pi] {
                let jx = jpc * cam.rotation;
                for k in 0..3 {
                    jac.push((o + k, jx.column(k).into_owned()));
                }
            }

            for &(i, ji) in &jac {
                g[i] += ji.dot(&residual);
                for &(j, jj) in &jac {
                    if j >= i {
                        h[(i, j)] += ji.dot(&jj);
                    }
                }
            }
        }
        // mirror the upper triangle
        for i in 0..ncols {
            for j in (i + 1)..ncols {
                h[(j, i)] = h[(i, j)];
            }
        }

        let mut accepted = false;
        for _ in 0..20 {
            let mut damped = h.clone();
            for i in 0..ncols {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&g));
            let trial = state.apply_step(&step, &cols, &point_cols);
            match total_cost(&trial, &obs) {
                Some(trial_cost) if trial_cost < cost => {
                    let rel = (cost - trial_cost) / cost.max(1e-300);
                    state = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    if rel < opts.relative_cost_tol {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // damping exhausted without improvement: best iterate so far
            break;
        }
    }

    // guard against rotation drift from composed increments
    for cam in &mut state.cameras {
        let svd = cam.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let det = (u * vt).determinant();
        cam.rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum())) * vt;
    }

    let mean_px = mean_residual_norm(&state, &obs);
    Ok(BundleResult {
        rig: CameraRig::new(state.cameras)?,
        points: state.points.iter().map(|p| (*p).into()).collect(),
        mean_reprojection_px: mean_px,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::test_cameras::ring_camera;
    use crate::geometry::triangulate_linear;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal;

    /// Render a 6x6 planar grid through a zero-distortion camera for a set
    /// of board poses, giving an exact oracle for zhang_init.
    fn render_views(
        kmtx: &Matrix3<f64>,
        poses: &[(Matrix3<f64>, Vector3<f64>)],
    ) -> PlanarObservationSet {
        let views = poses
            .iter()
            .map(|(r, t)| {
                let mut points = Vec::new();
                for i in 0..6 {
                    for j in 0..6 {
                        let board = [i as f64 * 0.05, j as f64 * 0.05];
                        let pc = r * Vector3::new(board[0], board[1], 0.0) + t;
                        let uvw = kmtx * pc;
                        points.push((board, [uvw[0] / uvw[2], uvw[1] / uvw[2]]));
                    }
                }
                PlanarView { points }
            })
            .collect();
        PlanarObservationSet { views }
    }

    fn board_poses() -> Vec<(Matrix3<f64>, Vector3<f64>)> {
        [
            (0.3, 0.1, 0.0, -0.15, -0.1, 0.9),
            (-0.2, 0.25, 0.1, -0.1, -0.2, 1.1),
            (0.1, -0.3, -0.05, -0.2, -0.05, 1.0),
            (-0.35, -0.15, 0.2, 0.0, -0.15, 1.3),
            (0.25, 0.3, -0.15, -0.25, 0.0, 0.8),
        ]
        .iter()
        .map(|&(rx, ry, rz, tx, ty, tz)| {
            (
                nalgebra::Rotation3::from_euler_angles(rx, ry, rz).into_inner(),
                Vector3::new(tx, ty, tz),
            )
        })
        .collect()
    }

    #[test]
    fn zhang_recovers_intrinsics_and_extrinsics() {
        let kmtx = Matrix3::new(900.0, 0.0, 960.0, 0.0, 900.0, 600.0, 0.0, 0.0, 1.0);
        let poses = board_poses();
        let obs = render_views(&kmtx, &poses);
        let init = zhang_init(&obs).unwrap();
        assert_abs_diff_eq!(init.fx / 900.0, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(init.fy / 900.0, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(init.cx / 960.0, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(init.cy / 600.0, 1.0, epsilon = 1e-6);
        for ((r_est, t_est), (r_gt, t_gt)) in init.view_poses.iter().zip(&poses) {
            assert!((r_est - r_gt).norm() < 1e-6, "rotation mismatch");
            assert!((t_est - t_gt).norm() < 1e-6, "translation mismatch");
        }
    }

    #[test]
    fn zhang_needs_three_views() {
        let kmtx = Matrix3::new(900.0, 0.0, 960.0, 0.0, 900.0, 600.0, 0.0, 0.0, 1.0);
        let poses: Vec<_> = board_poses().into_iter().take(2).collect();
        let obs = render_views(&kmtx, &poses);
        assert!(matches!(zhang_init(&obs), Err(Error::Degeneracy(_))));
    }

    #[test]
    fn zhang_rejects_identical_views() {
        let kmtx = Matrix3::new(900.0, 0.0, 960.0, 0.0, 900.0, 600.0, 0.0, 0.0, 1.0);
        let pose = board_poses()[0];
        let obs = render_views(&kmtx, &[pose, pose, pose, pose]);
        assert!(matches!(zhang_init(&obs), Err(Error::Degeneracy(_))));
    }

    /// Synthetic rig + observed cloud used by the bundle adjustment tests.
    fn synthetic_problem(
        seed: u64,
        pixel_sigma: f64,
    ) -> (CameraRig, Vec<Observation3D>, Vec<Point3>, Vec<Point3>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cameras: Vec<CameraParams> = (0..5).map(|i| ring_camera(i, 5, 3.0, 1.4)).collect();
        let rig = CameraRig::new(cameras).unwrap();
        let points: Vec<Point3> = (0..40)
            .map(|_| {
                [
                    rng.random_range(-0.7..0.7),
                    rng.random_range(-0.7..0.7),
                    rng.random_range(0.4..1.8),
                ]
            })
            .collect();
        let noise = Normal::new(0.0, pixel_sigma).unwrap();
        let mut observations = Vec::new();
        for cam in rig.cameras() {
            for (pid, p) in points.iter().enumerate() {
                let px = project(cam, *p, true).unwrap();
                observations.push(Observation3D {
                    camera_id: cam.camera_id.clone(),
                    point_id: pid,
                    pixel: [px[0] + noise.sample(&mut rng), px[1] + noise.sample(&mut rng)],
                });
            }
        }
        // initial point estimates triangulated from the (perturbed) rig are
        // built by the caller; here return ground truth for convenience
        (rig, observations, points.clone(), points)
    }

    fn perturb_rig(rig: &CameraRig, seed: u64, rot_deg: f64, trans_m: f64) -> CameraRig {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cams = rig
            .cameras()
            .iter()
            .map(|cam| {
                let axis = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize();
                let angle = rot_deg.to_radians();
                let dt = Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
                .normalize()
                    * trans_m;
                let mut c = cam.clone();
                c.rotation = nalgebra::Rotation3::new(axis * angle).into_inner() * c.rotation;
                c.translation += dt;
                c
            })
            .collect();
        CameraRig::new(cams).unwrap()
    }

    fn triangulated_initials(rig: &CameraRig, obs: &[Observation3D], n_points: usize) -> Vec<Point3> {
        (0..n_points)
            .map(|pid| {
                let views: Vec<(&CameraParams, [f64; 2])> = obs
                    .iter()
                    .filter(|o| o.point_id == pid)
                    .map(|o| (rig.by_id(&o.camera_id).unwrap(), o.pixel))
                    .collect();
                triangulate_linear(&views).unwrap().point
            })
            .collect()
    }

    #[test]
    fn noiseless_bundle_converges_to_zero_error() {
        let (rig, obs, _, points) = synthetic_problem(7, 0.0);
        let perturbed = perturb_rig(&rig, 8, 1.0, 0.01);
        let initials = triangulated_initials(&perturbed, &obs, points.len());
        let fix = BundleFixMask::first_camera_gauge(&perturbed);
        let result =
            bundle_adjust(&perturbed, &obs, &initials, &fix, &BundleOptions::default()).unwrap();
        assert!(
            result.mean_reprojection_px < 1e-8,
            "mean error {} px",
            result.mean_reprojection_px
        );
    }

    #[test]
    fn noisy_bundle_reaches_noise_floor() {
        let (rig, obs, _, points) = synthetic_problem(11, 0.5);
        let perturbed = perturb_rig(&rig, 12, 1.0, 0.01);
        let initials = triangulated_initials(&perturbed, &obs, points.len());
        let fix = BundleFixMask::first_camera_gauge(&perturbed);
        let result =
            bundle_adjust(&perturbed, &obs, &initials, &fix, &BundleOptions::default()).unwrap();
        // mean of residual norms for sigma = 0.5 is about sigma * sqrt(pi/2)
        // minus the dof absorbed by the model; anything below 1 px is sane
        assert!(
            result.mean_reprojection_px < 1.0,
            "mean error {} px",
            result.mean_reprojection_px
        );
        assert!(result.mean_reprojection_px > 0.1);
    }

    #[test]
    fn zero_iteration_budget_returns_input() {
        let (rig, obs, _, points) = synthetic_problem(3, 0.0);
        let perturbed = perturb_rig(&rig, 4, 1.0, 0.01);
        let initials = triangulated_initials(&perturbed, &obs, points.len());
        let fix = BundleFixMask::first_camera_gauge(&perturbed);
        let opts = BundleOptions {
            max_iterations: 0,
            ..Default::default()
        };
        let result = bundle_adjust(&perturbed, &obs, &initials, &fix, &opts).unwrap();
        assert_eq!(result.iterations, 0);
        for (a, b) in result.rig.cameras().iter().zip(perturbed.cameras()) {
            assert_eq!(a.translation, b.translation);
        }
        assert!(result.mean_reprojection_px > 0.1, "perturbed rig should start in error");
    }

    #[test]
    fn camera_with_too_few_points_rejected() {
        let (rig, mut obs, _, points) = synthetic_problem(5, 0.0);
        let first = rig.cameras()[0].camera_id.clone();
        obs.retain(|o| o.camera_id != first || o.point_id < 5);
        let fix = BundleFixMask::default();
        assert!(matches!(
            bundle_adjust(&rig, &obs, &points, &fix, &BundleOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
