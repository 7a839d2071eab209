//! Simulation of microwave-pumped, electron-probed single-spin resonance
//! imaging in a transmission electron microscope.
//!
//! The crate computes first-order electron–spin scattering probability maps
//! in diffraction, defocused-image and Zernike phase-contrast modes, prepares
//! spin states with detuned microwave pulses, and quantifies detectability
//! through the classical Fisher information, Cramér–Rao SNR bounds and an
//! optimized pixel-mask estimator.
//!
//! All quantities are SI internally. Conversion to μrad and Å happens only at
//! the I/O boundary (see the `spintem` command-line tool).
//!
//! Module map:
//!
//! * [`params`]: physical constants, beam and spin parameter sets.
//! * [`specfun`]: Bessel functions, `erf`, adaptive and Gauss–Legendre quadrature.
//! * [`spin`]: Bloch-vector driving by a detuned π/2 pulse.
//! * [`kernel`]: spin smearing form factor, deflection kernel, longitudinal overlap.
//! * [`diffraction`]: angular probability maps near the zero-deflection peak.
//! * [`imaging`]: position-space maps via masked Hankel transforms, Zernike variant,
//!   coherent wavefunction.
//! * [`metrology`]: Fisher information, SNR bounds, sweeps and ensemble scaling.
//! * [`analysis`]: pixelation, per-pixel SNR, mask optimization, estimator and
//!   Poisson synthetic experiments.
//! * [`backaction`]: spin purity loss from a single electron passage.

pub mod analysis;
pub mod backaction;
pub mod diffraction;
pub mod error;
pub mod grid;
pub mod imaging;
pub mod kernel;
pub mod metrology;
pub mod params;
pub mod specfun;
pub mod spin;

pub use error::{Error, Result};
pub use grid::{Grid, GridKind, ProbabilityMap};
pub use kernel::KernelContext;
pub use params::{default_params_200keV, BeamParams, BeamPreset, PhysConsts, SpinParams};
pub use spin::BlochState;
