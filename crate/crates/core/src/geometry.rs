//! Pinhole camera model and point triangulation.
//!
//! Cameras use a two-coefficient radial distortion model (k1, k2) applied to
//! normalized image coordinates: (1 + k1 r^2 + k2 r^4). Rotations are
//! world-to-camera. Triangulation is the usual two-step: a homogeneous DLT
//! estimate from undistorted observations, refined by damped Gauss-Newton on
//! the full reprojection residual.

use nalgebra::{Matrix3, Matrix4, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::model::Point3;

/// Intrinsics, distortion and pose of one camera in a calibrated rig.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraParams {
    pub camera_id: String,
    /// Focal lengths in pixels.
    pub fx: f64,
    pub fy: f64,
    /// Principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    /// Radial distortion coefficients (unitless, on normalized coordinates).
    pub k1: f64,
    pub k2: f64,
    /// World-to-camera rotation, orthonormal with det = +1.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation in meters.
    pub translation: Vector3<f64>,
    /// Sensor size [width, height] in pixels.
    pub image_size: [u32; 2],
}

impl CameraParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::format(
                format!("camera `{}`", self.camera_id),
                "focal lengths must be positive",
            ));
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return Err(Error::format(
                format!("camera `{}`.image_size", self.camera_id),
                "image size must be positive",
            ));
        }
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-9 {
            return Err(Error::format(
                format!("camera `{}`.R", self.camera_id),
                format!("rotation not orthonormal (|R'R - I| = {err:.2e})"),
            ));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::format(
                format!("camera `{}`.R", self.camera_id),
                "rotation must have det = +1",
            ));
        }
        Ok(())
    }

    /// Camera center in world coordinates: -R' t.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.transpose() * self.translation
    }

    /// The 3x3 intrinsic matrix (zero skew).
    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// A calibrated multi-camera rig (at least two cameras, distinct ids).
#[derive(Debug, Clone)]
pub struct CameraRig {
    cameras: Vec<CameraParams>,
}

impl CameraRig {
    pub fn new(cameras: Vec<CameraParams>) -> Result<Self> {
        if cameras.len() < 2 {
            return Err(Error::Config(format!(
                "a rig needs at least 2 cameras, got {}",
                cameras.len()
            )));
        }
        for cam in &cameras {
            cam.validate()?;
        }
        for (i, a) in cameras.iter().enumerate() {
            for b in &cameras[i + 1..] {
                if a.camera_id == b.camera_id {
                    return Err(Error::Config(format!(
                        "duplicate camera_id `{}`",
                        a.camera_id
                    )));
                }
            }
        }
        Ok(CameraRig { cameras })
    }

    pub fn cameras(&self) -> &[CameraParams] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn by_id(&self, camera_id: &str) -> Option<&CameraParams> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    /// Position of `camera_id` in the rig's camera order.
    pub fn index_of(&self, camera_id: &str) -> Option<usize> {
        self.cameras.iter().position(|c| c.camera_id == camera_id)
    }
}

fn distort(k1: f64, k2: f64, x: f64, y: f64) -> (f64, f64) {
    let r2 = x * x + y * y;
    let d = 1.0 + k1 * r2 + k2 * r2 * r2;
    (x * d, y * d)
}

/// Invert the radial distortion by fixed-point iteration (10 rounds,
/// adequate for |k| <= 0.3).
fn undistort(k1: f64, k2: f64, xd: f64, yd: f64) -> (f64, f64) {
    let (mut x, mut y) = (xd, yd);
    for _ in 0..10 {
        let r2 = x * x + y * y;
        let d = 1.0 + k1 * r2 + k2 * r2 * r2;
        x = xd / d;
        y = yd / d;
    }
    (x, y)
}

/// Project a world point to pixel coordinates.
///
/// Fails with a behind-camera error when the point has non-positive depth.
pub fn project(cam: &CameraParams, point: Point3, apply_distortion: bool) -> Result<[f64; 2]> {
    let pc = cam.rotation * Vector3::from(point) + cam.translation;
    if pc.z <= 0.0 {
        return Err(Error::BehindCamera {
            camera_id: cam.camera_id.clone(),
            depth: pc.z,
        });
    }
    let (mut x, mut y) = (pc.x / pc.z, pc.y / pc.z);
    if apply_distortion {
        (x, y) = distort(cam.k1, cam.k2, x, y);
    }
    Ok([cam.fx * x + cam.cx, cam.fy * y + cam.cy])
}

/// Map a raw (distorted) pixel to undistorted normalized image coordinates.
pub fn pixel_to_normalized(cam: &CameraParams, pixel: [f64; 2]) -> (f64, f64) {
    let xd = (pixel[0] - cam.cx) / cam.fx;
    let yd = (pixel[1] - cam.cy) / cam.fy;
    undistort(cam.k1, cam.k2, xd, yd)
}

/// Result of a linear triangulation.
#[derive(Debug, Clone, Copy)]
pub struct Triangulation {
    pub point: Point3,
    /// Set when the design matrix condition number exceeds 1e8
    /// (near-parallel rays); the point is still the best estimate.
    pub low_confidence: bool,
}

const CONDITION_LIMIT: f64 = 1e8;

/// Homogeneous DLT triangulation from two or more raw pixel observations.
///
/// Pixels are undistorted and normalized before the linear system is built,
/// so the design matrix stays well scaled. The solution is the eigenvector
/// of the smallest eigenvalue of A'A.
pub fn triangulate_linear(observations: &[(&CameraParams, [f64; 2])]) -> Result<Triangulation> {
    if observations.len() < 2 {
        return Err(Error::arity("triangulation", 2, observations.len()));
    }
    for (i, (a, _)) in observations.iter().enumerate() {
        for (b, _) in &observations[i + 1..] {
            if (a.center() - b.center()).norm() < 1e-12 {
                return Err(Error::Degeneracy(format!(
                    "cameras `{}` and `{}` share a center",
                    a.camera_id, b.camera_id
                )));
            }
        }
    }

    let mut ata = Matrix4::<f64>::zeros();
    for (cam, pixel) in observations {
        let (x, y) = pixel_to_normalized(cam, *pixel);
        let r = &cam.rotation;
        let t = &cam.translation;
        // rows of [R | t] in normalized coordinates
        let row = |coef: f64, axis: usize| -> Vector4<f64> {
            Vector4::new(
                coef * r[(2, 0)] - r[(axis, 0)],
                coef * r[(2, 1)] - r[(axis, 1)],
                coef * r[(2, 2)] - r[(axis, 2)],
                coef * t[2] - t[axis],
            )
        };
        for v in [row(x, 0), row(y, 1)] {
            ata += v * v.transpose();
        }
    }

    let eig = ata.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    // sigma_1 / sigma_3 of the design matrix; sigma_4 ~ 0 is the solution
    // direction, sigma_3 -> 0 signals near-parallel rays.
    let s1 = eig.eigenvalues[order[3]].max(0.0).sqrt();
    let s3 = eig.eigenvalues[order[1]].max(0.0).sqrt();
    let low_confidence = !(s3 > 0.0 && s1 / s3 <= CONDITION_LIMIT);

    let mut h = eig.eigenvectors.column(order[0]).into_owned();
    if low_confidence {
        // the two smallest directions are numerically entangled; keep the
        // finite-point representative so a flagged result can still be returned
        let alt = eig.eigenvectors.column(order[1]);
        if alt[3].abs() > h[3].abs() {
            h = alt.into_owned();
        }
    }
    if h[3].abs() < 1e-300 {
        return Err(Error::Degeneracy(
            "triangulated point at infinity".to_string(),
        ));
    }
    let point = [h[0] / h[3], h[1] / h[3], h[2] / h[3]];

    Ok(Triangulation {
        point,
        low_confidence,
    })
}

/// Result of the nonlinear point refinement.
#[derive(Debug, Clone, Copy)]
pub struct RefinedPoint {
    pub point: Point3,
    /// Root-mean-square reprojection residual in pixels at the returned point.
    pub rms_px: f64,
    /// False when the optimizer could not improve on the initial point
    /// (the initial point is returned in that case).
    pub converged: bool,
}

fn reprojection_cost(observations: &[(&CameraParams, [f64; 2])], point: Point3) -> Option<f64> {
    let mut cost = 0.0;
    for (cam, pixel) in observations {
        let proj = project(cam, point, true).ok()?;
        let du = proj[0] - pixel[0];
        let dv = proj[1] - pixel[1];
        cost += du * du + dv * dv;
    }
    Some(cost)
}

/// Residual and 2x3 Jacobian of one observation with respect to the point.
fn point_jacobian(
    cam: &CameraParams,
    pixel: [f64; 2],
    point: Point3,
) -> Option<(Vector2<f64>, nalgebra::Matrix2x3<f64>)> {
    let pc = cam.rotation * Vector3::from(point) + cam.translation;
    if pc.z <= 0.0 {
        return None;
    }
    let (x, y) = (pc.x / pc.z, pc.y / pc.z);
    let r2 = x * x + y * y;
    let d = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2;
    let dd = cam.k1 + 2.0 * cam.k2 * r2; // d(d)/d(r2)
    let (xd, yd) = (x * d, y * d);
    let residual = Vector2::new(
        cam.fx * xd + cam.cx - pixel[0],
        cam.fy * yd + cam.cy - pixel[1],
    );

    // d(xd, yd) / d(x, y)
    let dxdx = d + 2.0 * x * x * dd;
    let dxdy = 2.0 * x * y * dd;
    let dydy = d + 2.0 * y * y * dd;
    // d(x, y) / d(pc)
    let iz = 1.0 / pc.z;
    let dn = nalgebra::Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    let ddist = nalgebra::Matrix2::new(cam.fx * dxdx, cam.fx * dxdy, cam.fy * dxdy, cam.fy * dydy);
    Some((residual, ddist * dn * cam.rotation))
}

/// Refine a triangulated point by damped Gauss-Newton on the reprojection
/// residuals. The returned residual never exceeds the initial one.
pub fn triangulate_refined(
    observations: &[(&CameraParams, [f64; 2])],
    initial: Point3,
) -> Result<RefinedPoint> {
    if observations.len() < 2 {
        return Err(Error::arity("triangulation refinement", 2, observations.len()));
    }
    let n = observations.len() as f64;
    let Some(mut cost) = reprojection_cost(observations, initial) else {
        // initial point behind a camera; nothing sensible to optimize
        return Ok(RefinedPoint {
            point: initial,
            rms_px: f64::INFINITY,
            converged: false,
        });
    };

    let mut point = Vector3::from(initial);
    let mut lambda = 1e-6;
    let mut improved = false;
    for _ in 0..50 {
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        let mut ok = true;
        for (cam, pixel) in observations {
            match point_jacobian(cam, *pixel, point.into()) {
                Some((r, j)) => {
                    h += j.transpose() * j;
                    g += j.transpose() * r;
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break;
        }

        let mut accepted = false;
        for _ in 0..10 {
            let mut damped = h;
            for i in 0..3 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = point + step;
            if let Some(trial_cost) = reprojection_cost(observations, trial.into()) {
                if trial_cost < cost {
                    let rel = (cost - trial_cost) / cost.max(1e-300);
                    point = trial;
                    cost = trial_cost;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    improved = true;
                    if rel < 1e-14 {
                        return Ok(RefinedPoint {
                            point: point.into(),
                            rms_px: (cost / n).sqrt(),
                            converged: true,
                        });
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }

    Ok(RefinedPoint {
        point: point.into(),
        rms_px: (cost / n).sqrt(),
        converged: improved || cost == 0.0,
    })
}
