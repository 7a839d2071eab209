//! Scattering kernels shared by the diffraction and imaging modes.
//!
//! The deflection kernel is
//!
//! ```text
//! 𝓛_ς(ϑ; z_p) = ∫ dq/(2Δk⊥) · exp[−(a² + ζq²)/(4Δk⊥²)] · I₁(aqζ/(2Δk⊥²)) · 𝓘_es(q) · e^{iςδk²z_p/k_z0}
//! ```
//!
//! with `a = k_z0·ϑ` and `ζ = 1 + 2iΔk⊥²z_p/k_z0`. The exponent is always
//! recombined with the scaled Bessel function, `e^{−(a−q)²/(4Δk⊥²)}·i1e(·)`,
//! because the raw `I₁` argument overflows for nanometre probes.

use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{default_params_200keV, preset_params, BeamParams, BeamPreset, PhysConsts, SpinParams};
use crate::specfun::{gauss_legendre, i1e, i1e_complex, integrate_1d, QuadResult, QuadSpec};

/// Everything a kernel evaluation needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelContext {
    pub beam: BeamParams,
    pub spin: SpinParams,
    pub consts: PhysConsts,
}

impl KernelContext {
    pub fn new(beam: BeamParams, spin: SpinParams, consts: PhysConsts) -> Result<Self> {
        beam.validate()?;
        spin.validate()?;
        if !(consts.r_e >= 0.0) {
            return Err(Error::InvalidParams("r_e must be non-negative".into()));
        }
        Ok(Self { beam, spin, consts })
    }

    /// Canonical 200 keV broad-beam context.
    pub fn canonical() -> Self {
        let (c, b, s) = default_params_200keV();
        Self { beam: b, spin: s, consts: c }
    }

    pub fn preset(p: BeamPreset) -> Self {
        let (c, b, s) = preset_params(p);
        Self { beam: b, spin: s, consts: c }
    }

    pub fn with_dk_perp(mut self, dk: f64) -> Result<Self> {
        self.beam.dk_perp = dk;
        self.beam.validate()?;
        Ok(self)
    }

    pub fn with_r_e(mut self, r_e: f64) -> Self {
        self.consts.r_e = r_e;
        self
    }

    pub fn dk(&self) -> f64 {
        self.beam.dk_perp
    }

    pub fn k(&self) -> f64 {
        self.beam.k_z0
    }

    pub fn r_e(&self) -> f64 {
        self.consts.r_e
    }

    pub fn delta_k(&self) -> f64 {
        self.spin.delta_k(&self.beam, &self.consts)
    }

    /// Outer edge 8Δk⊥/k_z0 of the diffraction validity region.
    pub fn theta_cut(&self) -> f64 {
        8.0 * self.beam.dk_perp / self.beam.k_z0
    }
}

/// Spin-flip channel index ς ∈ {−1, 0, +1}.
pub fn check_varsigma(varsigma: i32) -> Result<()> {
    if (-1..=1).contains(&varsigma) {
        Ok(())
    } else {
        Err(Error::Domain(format!("varsigma must be -1, 0 or +1, got {varsigma}")))
    }
}

/// Fourier transform of the 1s spin density, `16/(4 + a₀²q²)²`.
pub fn smear_ft(q: f64, ctx: &KernelContext) -> Result<f64> {
    if q.is_nan() || q < 0.0 {
        return Err(Error::Domain(format!("smear_ft needs q >= 0, got {q}")));
    }
    Ok(form_factor(ctx.spin.a0, q))
}

#[inline]
pub(crate) fn form_factor(a0: f64, q: f64) -> f64 {
    let d = 4.0 + a0 * a0 * q * q;
    16.0 / (d * d)
}

fn q_window(a: f64, dk: f64) -> (f64, f64) {
    ((a - 10.0 * dk).max(0.0), a + 10.0 * dk)
}

/// Deflection kernel by adaptive Gauss–Kronrod quadrature.
///
/// At `z_p = 0` the result is real and independent of ς. The returned
/// `converged` flag reports quadrature failure; the estimate is still usable.
pub fn deflection_kernel(
    theta: f64,
    ctx: &KernelContext,
    varsigma: i32,
    z_p: f64,
) -> Result<QuadResult<Complex64>> {
    deflection_kernel_with(theta, ctx, varsigma, z_p, &QuadSpec { rel_tol: 1e-10, ..QuadSpec::default() })
}

pub fn deflection_kernel_with(
    theta: f64,
    ctx: &KernelContext,
    varsigma: i32,
    z_p: f64,
    spec: &QuadSpec,
) -> Result<QuadResult<Complex64>> {
    check_varsigma(varsigma)?;
    spec.validate()?;
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Domain(format!("deflection kernel needs theta >= 0, got {theta}")));
    }
    let dk = ctx.dk();
    let k = ctx.k();
    let a0 = ctx.spin.a0;
    let a = k * theta;
    let (lo, hi) = q_window(a, dk);
    let s2 = 2.0 * dk * dk;
    if a == 0.0 {
        return Ok(QuadResult { value: Complex64::new(0.0, 0.0), error: 0.0, converged: true, evaluations: 0 });
    }
    if z_p == 0.0 {
        let r = integrate_1d(
            |q: f64| {
                let d = a - q;
                (-d * d / (2.0 * s2)).exp() * i1e(a * q / s2) * form_factor(a0, q)
            },
            lo,
            hi,
            spec,
        );
        return Ok(QuadResult {
            value: Complex64::new(r.value / (2.0 * dk), 0.0),
            error: r.error / (2.0 * dk),
            converged: r.converged,
            evaluations: r.evaluations,
        });
    }
    let zeta = Complex64::new(1.0, s2 * z_p / k);
    let dk2 = ctx.delta_k().powi(2);
    let flip_phase = Complex64::from_polar(1.0, varsigma as f64 * dk2 * z_p / k);
    let r = integrate_1d(
        |q: f64| {
            let d = a - q;
            let w = a * q * zeta / s2;
            let ex = Complex64::new(-d * d / (2.0 * s2), z_p * (a * q - 0.5 * q * q) / k);
            ex.exp() * i1e_complex(w) * form_factor(a0, q)
        },
        lo,
        hi,
        spec,
    );
    Ok(QuadResult {
        value: r.value * flip_phase / (2.0 * dk),
        error: r.error / (2.0 * dk),
        converged: r.converged,
        evaluations: r.evaluations,
    })
}

/// Largest Δk⊥·a₀ for which the point-spin closed form is accepted.
pub const LARGE_PROBE_MAX_DK_A0: f64 = 1e-2;

/// Closed-form kernel for probes much wider than the spin (`𝓘_es ≈ 1`).
///
/// Evaluated as `Δk/(aζ)·[expm1(iθ) − expm1(−a²/4Δk²)]`, `θ = a²ε/(4Δk²)`
/// with `ζ = 1 + iε`, which is finite at `ϑ → 0` and decays as `1/ϑ`.
pub fn deflection_kernel_largeprobe(theta: f64, ctx: &KernelContext, varsigma: i32, z_p: f64) -> Result<Complex64> {
    check_varsigma(varsigma)?;
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Domain(format!("deflection kernel needs theta >= 0, got {theta}")));
    }
    let dk = ctx.dk();
    if dk * ctx.spin.a0 > LARGE_PROBE_MAX_DK_A0 {
        return Err(Error::Domain(format!(
            "large-probe kernel needs dk_perp*a0 <= {LARGE_PROBE_MAX_DK_A0}, got {:.3e}; use deflection_kernel",
            dk * ctx.spin.a0
        )));
    }
    let k = ctx.k();
    let a = k * theta;
    if a == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let g = a * a / (4.0 * dk * dk);
    let eps = 2.0 * dk * dk * z_p / k;
    let zeta = Complex64::new(1.0, eps);
    let th = g * eps;
    let half = 0.5 * th;
    let expm1_i = Complex64::new(-2.0 * half.sin().powi(2), th.sin());
    let bracket = expm1_i - Complex64::new((-g).exp_m1(), 0.0);
    let phase = Complex64::from_polar(1.0, varsigma as f64 * ctx.delta_k().powi(2) * z_p / k);
    Ok(phase * bracket * dk / (a * zeta))
}

/// Real kernel at `z_p = 0` as a function of the transverse wavenumber
/// `k⊥ = k_z0·ϑ`, by a fixed 8-panel, 24-point Gauss–Legendre rule.
///
/// This is the hot-path evaluator for the radial caches; its accuracy against
/// [`deflection_kernel`] is covered by tests.
pub fn kernel_at_kperp(k_perp: f64, dk: f64, a0: f64) -> f64 {
    if k_perp <= 0.0 {
        return 0.0;
    }
    static GL24: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (gx, gw) = GL24.get_or_init(|| gauss_legendre(24));
    let (lo, hi) = q_window(k_perp, dk);
    let s2 = 2.0 * dk * dk;
    let h = 0.5 * (hi - lo) / 8.0;
    let mut acc = 0.0;
    for p in 0..8 {
        let c = lo + (2 * p + 1) as f64 * h;
        for (x, w) in gx.iter().zip(gw) {
            let q = c + h * x;
            let d = k_perp - q;
            acc += w * (-d * d / (2.0 * s2)).exp() * i1e(k_perp * q / s2) * form_factor(a0, q);
        }
    }
    acc * h / (2.0 * dk)
}

/// Batch evaluation of [`kernel_at_kperp`] reusing one quadrature rule shape.
pub fn kernel_at_kperp_many(ks: &[f64], dk: f64, a0: f64) -> Vec<f64> {
    use rayon::prelude::*;
    ks.par_iter().map(|&k| kernel_at_kperp(k, dk, a0)).collect()
}

/// Longitudinal overlap `e^{−iq_z z_p}·exp(−q_z²/(8Δk_z²))`.
pub fn longitudinal_overlap(q_z: f64, ctx: &KernelContext, z_p: f64) -> Complex64 {
    let dkz = ctx.beam.dk_z;
    Complex64::from_polar((-q_z * q_z / (8.0 * dkz * dkz)).exp(), -q_z * z_p)
}

/// Outcome of one physical validity condition, reported in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityCheck {
    pub name: String,
    pub passed: bool,
    /// Whether a failure invalidates the maps (otherwise informational).
    pub required: bool,
    pub detail: String,
}

/// Conditions under which the maps treat the longitudinal overlap as unity
/// and drop the small-angle corrections.
pub fn validity_checks(ctx: &KernelContext) -> Vec<ValidityCheck> {
    let b = &ctx.beam;
    let recoil = b.dk_perp * b.dk_perp / (4.0 * b.k_z0);
    let ov = longitudinal_overlap(b.dk_perp * b.dk_perp / b.k_z0, ctx, 0.0).norm();
    vec![
        ValidityCheck {
            name: "longitudinal_overlap".into(),
            passed: b.dk_z > recoil,
            required: true,
            detail: format!("dk_z = {:.3e} vs dk_perp^2/(4 k_z0) = {:.3e}; overlap at q_z = dk^2/k: {:.6}", b.dk_z, recoil, ov),
        },
        ValidityCheck {
            name: "paraxial".into(),
            passed: b.dk_perp / b.k_z0 <= crate::params::PARAXIAL_LIMIT,
            required: true,
            detail: format!("dk_perp/k_z0 = {:.3e}", b.dk_perp / b.k_z0),
        },
        ValidityCheck {
            name: "large_probe".into(),
            passed: b.dk_perp * ctx.spin.a0 <= LARGE_PROBE_MAX_DK_A0,
            required: false,
            detail: format!("dk_perp*a0 = {:.3e} (closed-form kernel applicability)", b.dk_perp * ctx.spin.a0),
        },
    ]
}

/// Small-angle slope of the kernel, `𝓛 ≈ k_z0ϑ/(4Δk⊥)` for point-like spins.
pub fn small_angle_slope(ctx: &KernelContext) -> f64 {
    ctx.k() / (4.0 * ctx.dk())
}
