//! Markerless multi-view 3D human pose reconstruction and evaluation.
//!
//! The pipeline stages are:
//!
//! 1. **geometry / calibrate** – pinhole projection, Zhang-style intrinsic
//!    initialization, bundle adjustment, and two-step point triangulation.
//! 2. **selector** – per-frame 3D candidates from all camera subsets,
//!    confidence pruning, and trajectory selection by shortest path in a
//!    layered DAG.
//! 3. **smoothing** – zero-phase Butterworth low-pass over joint channels.
//! 4. **alignment** – per-joint linear maps from marker triads to joint
//!    centers, for comparing against marker-based ground truth.
//! 5. **metrics** – evaluation protocol (mean error / MPJPE / PA-MPJPE),
//!    speed and acceleration distributions, and the local-movement
//!    voxel-coverage metric.
//! 6. **synth** – synthetic rigs, motions and corruption models that give
//!    every stage an analytic ground truth.

pub mod alignment;
pub mod calibrate;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod model;
pub mod selector;
pub mod smoothing;
pub mod synth;

pub use error::{Error, Result};
