//! Microwave π/2-pulse driving of a spin-1/2 Bloch vector.
//!
//! [`drive`] evaluates the undamped closed-form solution in the rotating
//! frame and maps it to the lab frame with the `cos(ω₀t)`, `sin(ω₀t)` factors.
//! The generator in the rotating frame is `ds/dt = Ω × s` with
//! `Ω = (−ω₁, 0, −δ)`.
//!
//! States handed to the imaging code are expressed in the *imaging frame*,
//! obtained from the drive solution by a π rotation about x. In that frame the
//! on-resonance π/2 pulse from the ground state ends on +y, and the far
//! off-resonant reference sits on +z.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spin expectation values (⟨σx⟩, ⟨σy⟩, ⟨σz⟩).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochState {
    pub s: [f64; 3],
}

impl BlochState {
    pub fn new(s: [f64; 3]) -> Result<Self> {
        let b = Self { s };
        if !s.iter().all(|v| v.is_finite()) || b.norm() > 1.0 + 1e-12 {
            return Err(Error::Domain(format!("Bloch vector {s:?} is not inside the unit ball")));
        }
        Ok(b)
    }

    /// Spin anti-aligned with the bias field, the state before any drive.
    pub fn ground() -> Self {
        Self { s: [0.0, 0.0, -1.0] }
    }

    pub fn norm(&self) -> f64 {
        self.s.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Transverse magnitude sqrt(sx² + sy²).
    pub fn transverse(&self) -> f64 {
        self.s[0].hypot(self.s[1])
    }

    pub fn scaled_transverse(&self, a: f64) -> Self {
        Self { s: [a * self.s[0], a * self.s[1], self.s[2]] }
    }

    /// Rotation about z by `alpha` (transverse plane rotation).
    pub fn rotated(&self, alpha: f64) -> Self {
        let (s, c) = alpha.sin_cos();
        Self { s: [c * self.s[0] - s * self.s[1], s * self.s[0] + c * self.s[1], self.s[2]] }
    }
}

/// Rectangular microwave pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseParams {
    /// Rabi frequency ω₁ (rad/s).
    pub omega1: f64,
    /// Detuning δ = ω − ω₀ (rad/s).
    pub delta: f64,
    /// Pulse length (s).
    pub duration: f64,
}

impl PulseParams {
    pub fn new(omega1: f64, delta: f64, duration: f64) -> Result<Self> {
        if !(omega1 > 0.0) || !(duration >= 0.0) || !delta.is_finite() {
            return Err(Error::Domain("pulse needs omega1 > 0, duration >= 0, finite delta".into()));
        }
        Ok(Self { omega1, delta, duration })
    }

    /// π/2 pulse of length π/(2ω₁).
    pub fn pi_half(omega1: f64, delta: f64) -> Result<Self> {
        Self::new(omega1, delta, PI / (2.0 * omega1))
    }
}

/// Rotating-frame components (s₁, s₂, s_z) after time `t`.
pub fn rotating_frame(initial: &BlochState, omega1: f64, delta: f64, t: f64) -> [f64; 3] {
    let [sx0, sy0, sz0] = initial.s;
    let w2 = omega1 * omega1 + delta * delta;
    let w = w2.sqrt();
    let (sn, cs) = (w * t).sin_cos();
    let fixed = omega1 * sx0 + delta * sz0;
    let osc = (delta * sx0 - omega1 * sz0) * cs + w * sy0 * sn;
    let s1 = omega1 / w2 * fixed + delta / w2 * osc;
    let s2 = sy0 * cs + (omega1 * sz0 - delta * sx0) / w * sn;
    let sz = delta / w2 * fixed - omega1 / w2 * osc;
    [s1, s2, sz]
}

/// Lab-frame Bloch vector after the pulse. The lab mapping assumes the
/// initial state lies on the z axis, as it does for every prepared state.
pub fn drive(initial: &BlochState, pulse: &PulseParams, omega0: f64) -> BlochState {
    let [s1, s2, sz] = rotating_frame(initial, pulse.omega1, pulse.delta, pulse.duration);
    let phase = (omega0 * pulse.duration).rem_euclid(2.0 * PI);
    let (sn, cs) = phase.sin_cos();
    BlochState { s: [-s1 * cs - s2 * sn, s2 * cs - s1 * sn, sz] }
}

/// Maps a drive-frame state to the imaging frame (π rotation about x).
pub fn to_imaging_frame(s: &BlochState) -> BlochState {
    BlochState { s: [s.s[0], -s.s[1], -s.s[2]] }
}

/// Reference state for differential imaging (undriven spin, imaging frame).
pub fn reference_state() -> BlochState {
    to_imaging_frame(&BlochState::ground())
}

/// End states of π/2 pulses from the ground state, one per detuning, in the
/// imaging frame. Images are taken stroboscopically, at whole Larmor periods
/// after the pulse.
pub fn detuning_sweep(deltas: &[f64], omega1: f64, omega0: f64) -> Result<Vec<BlochState>> {
    if deltas.is_empty() {
        return Err(Error::Domain("detuning sweep needs at least one detuning".into()));
    }
    let g = BlochState::ground();
    deltas
        .iter()
        .map(|&d| {
            let p = PulseParams::pi_half(omega1, d)?;
            Ok(to_imaging_frame(&drive(&g, &p, omega0)))
        })
        .collect()
}

/// Detunings δ/ω₀ of the four prepared states used throughout the study.
pub const STUDY_DETUNINGS: [f64; 4] = [0.0, 0.025, 0.05, 0.075];
/// Rabi frequency ω₁/ω₀ used for the study states.
pub const STUDY_RABI: f64 = 0.01;

/// Prepared states for [`STUDY_DETUNINGS`] at ω₁ = 0.01 ω₀.
pub fn study_states(omega0: f64) -> Vec<BlochState> {
    let deltas: Vec<f64> = STUDY_DETUNINGS.iter().map(|d| d * omega0).collect();
    detuning_sweep(&deltas, STUDY_RABI * omega0, omega0).expect("non-empty sweep")
}
