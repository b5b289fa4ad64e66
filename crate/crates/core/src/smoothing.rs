//! Butterworth low-pass design and zero-phase trajectory smoothing.
//!
//! The filter is realized as cascaded second-order sections from the bilinear
//! transform with cutoff prewarping, applied forward-backward (zero net
//! phase, the biomechanics convention) with odd-reflection padding and
//! steady-state initial conditions per section.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{PoseSequence, JOINT_COUNT};

/// Low-pass design parameters. `order` is the per-pass filter order; the
/// zero-phase application squares the magnitude response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl FilterSpec {
    pub fn new(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        let spec = FilterSpec {
            order,
            cutoff_hz,
            sample_rate_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if ![2, 4, 6, 8].contains(&self.order) {
            return Err(Error::spec(
                "order",
                format!("order must be one of 2, 4, 6, 8; got {}", self.order),
            ));
        }
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::spec("sample_rate_hz", "must be positive"));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::spec(
                "cutoff_hz",
                format!(
                    "cutoff {} Hz must lie in (0, Nyquist = {} Hz)",
                    self.cutoff_hz,
                    self.sample_rate_hz / 2.0
                ),
            ));
        }
        Ok(())
    }
}

/// One biquad: numerator (b0, b1, b2), denominator (1, a1, a2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sos {
    pub b: [f64; 3],
    pub a1: f64,
    pub a2: f64,
}

impl Sos {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a1 + self.a2)
    }

    fn pole_radius(&self) -> f64 {
        // |p|^2 = a2 for a complex-conjugate pair; real poles are the roots
        let disc = self.a1 * self.a1 - 4.0 * self.a2;
        if disc < 0.0 {
            self.a2.abs().sqrt()
        } else {
            let r1 = (-self.a1 + disc.sqrt()) / 2.0;
            let r2 = (-self.a1 - disc.sqrt()) / 2.0;
            r1.abs().max(r2.abs())
        }
    }
}

/// A cascade of second-order sections with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct SosChain {
    pub sections: Vec<Sos>,
}

impl SosChain {
    /// Total number of state variables (two per section).
    pub fn state_order(&self) -> usize {
        2 * self.sections.len()
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Sos::dc_gain).product()
    }

    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .map(Sos::pole_radius)
            .fold(0.0, f64::max)
    }

    /// Single-pass magnitude response at `freq_hz` for the given sample rate.
    pub fn magnitude_hz(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        use nalgebra::Complex;
        let omega = 2.0 * std::f64::consts::PI * freq_hz / sample_rate_hz;
        let z_inv = Complex::new(omega.cos(), -omega.sin());
        let z_inv2 = z_inv * z_inv;
        self.sections
            .iter()
            .map(|s| {
                let num = Complex::new(s.b[0], 0.0) + z_inv * s.b[1] + z_inv2 * s.b[2];
                let den = Complex::new(1.0, 0.0) + z_inv * s.a1 + z_inv2 * s.a2;
                (num / den).norm()
            })
            .product()
    }
}

/// Design a Butterworth low-pass as second-order sections via the bilinear
/// transform with cutoff prewarping. DC gain is 1 and the single-pass
/// magnitude at the cutoff is 1/sqrt(2).
pub fn design_butterworth(spec: &FilterSpec) -> Result<SosChain> {
    spec.validate()?;
    let n = spec.order;
    let fs = spec.sample_rate_hz;
    // prewarped analog cutoff so the digital response hits -3 dB exactly at cutoff_hz
    let warped = 2.0 * fs * (std::f64::consts::PI * spec.cutoff_hz / fs).tan();
    let c = 2.0 * fs;

    let sections = (1..=n / 2)
        .map(|k| {
            let theta = (2 * k - 1) as f64 * std::f64::consts::PI / (2 * n) as f64;
            let a1_analog = 2.0 * theta.sin() * warped;
            let d0 = c * c + a1_analog * c + warped * warped;
            let d1 = 2.0 * (warped * warped - c * c);
            let d2 = c * c - a1_analog * c + warped * warped;
            let w2 = warped * warped;
            Sos {
                b: [w2 / d0, 2.0 * w2 / d0, w2 / d0],
                a1: d1 / d0,
                a2: d2 / d0,
            }
        })
        .collect();
    Ok(SosChain { sections })
}

/// Steady-state section states for a unit-step input (transposed direct
/// form II), so a constant signal passes without any startup transient.
fn steady_state_zi(s: &Sos) -> [f64; 2] {
    let g = s.dc_gain();
    let z2 = s.b[2] - s.a2 * g;
    let z1 = s.b[1] + s.b[2] - (s.a1 + s.a2) * g;
    [z1, z2]
}

/// One causal pass through the cascade, initial conditions scaled to the
/// first input sample.
fn sos_filter(chain: &SosChain, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let x0 = x.first().copied().unwrap_or(0.0);
    let mut scale = x0;
    for s in &chain.sections {
        let zi = steady_state_zi(s);
        let (mut z1, mut z2) = (zi[0] * scale, zi[1] * scale);
        for v in y.iter_mut() {
            let xin = *v;
            let out = s.b[0] * xin + z1;
            z1 = s.b[1] * xin - s.a1 * out + z2;
            z2 = s.b[2] * xin - s.a2 * out;
            *v = out;
        }
        scale *= s.dc_gain();
    }
    y
}

/// Padding long enough for the slowest pole's transient to decay below 1e-6,
/// never less than three state orders, never more than the signal allows.
fn pad_length(chain: &SosChain, signal_len: usize) -> usize {
    let base = 3 * chain.state_order();
    let r = chain.max_pole_radius();
    let decay = if r > 0.0 && r < 1.0 {
        (-6.0 * std::f64::consts::LN_10 / r.ln()).ceil() as usize
    } else {
        base
    };
    base.max(decay).min(signal_len - 1)
}

fn odd_extend(x: &[f64], padlen: usize) -> Vec<f64> {
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in 0..padlen {
        ext.push(2.0 * x[0] - x[padlen - i]);
    }
    ext.extend_from_slice(x);
    for i in 0..padlen {
        ext.push(2.0 * x[n - 1] - x[n - 2 - i]);
    }
    ext
}

/// Zero-phase (forward-backward) filtering. Output length equals input
/// length; requires the signal to be longer than three state orders.
pub fn filter_zero_phase(chain: &SosChain, signal: &[f64]) -> Result<Vec<f64>> {
    let min_len = 3 * chain.state_order();
    if signal.len() <= min_len {
        return Err(Error::Length(format!(
            "zero-phase filtering needs more than {} samples, got {}",
            min_len,
            signal.len()
        )));
    }
    let padlen = pad_length(chain, signal.len());
    let mut ext = odd_extend(signal, padlen);
    ext = sos_filter(chain, &ext);
    ext.reverse();
    ext = sos_filter(chain, &ext);
    ext.reverse();
    Ok(ext[padlen..padlen + signal.len()].to_vec())
}

/// Single causal pass (phase-delaying); exposed for ablation runs.
pub fn filter_single_pass(chain: &SosChain, signal: &[f64]) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Length("empty signal".into()));
    }
    Ok(sos_filter(chain, signal))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SmoothingMode {
    #[default]
    ZeroPhase,
    SinglePass,
}

/// Smooth every coordinate channel of a pose sequence independently.
pub fn smooth_sequence(seq: &PoseSequence, spec: &FilterSpec) -> Result<PoseSequence> {
    smooth_sequence_with(seq, spec, SmoothingMode::ZeroPhase)
}

pub fn smooth_sequence_with(
    seq: &PoseSequence,
    spec: &FilterSpec,
    mode: SmoothingMode,
) -> Result<PoseSequence> {
    let chain = design_butterworth(spec)?;
    let t = seq.frames.len();

    let channels: Vec<(usize, usize)> = (0..JOINT_COUNT)
        .flat_map(|j| (0..3).map(move |c| (j, c)))
        .collect();
    let filtered: Vec<Result<Vec<f64>>> = channels
        .par_iter()
        .map(|&(j, c)| {
            let signal: Vec<f64> = (0..t).map(|k| seq.frames[k][j][c]).collect();
            let out = match mode {
                SmoothingMode::ZeroPhase => filter_zero_phase(&chain, &signal),
                SmoothingMode::SinglePass => filter_single_pass(&chain, &signal),
            };
            out.map_err(|e| match e {
                Error::Length(msg) => {
                    Error::Length(format!("channel (joint {j}, coord {c}): {msg}"))
                }
                other => other,
            })
        })
        .collect();

    let mut frames = seq.frames.clone();
    for ((j, c), column) in channels.iter().zip(filtered) {
        let column = column?;
        for (k, v) in column.into_iter().enumerate() {
            frames[k][*j][*c] = v;
        }
    }
    PoseSequence::new(seq.sample_rate_hz, frames)
}
