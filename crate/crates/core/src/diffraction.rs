//! Angular probability maps near the zero-deflection peak.
//!
//! To first order in `r_e` the far-field density is
//! `P(ϑ⃗) = Π₀(ϑ) + cx(ϑ⃗)·⟨σx⟩ + cy(ϑ⃗)·⟨σy⟩` with
//!
//! ```text
//! Π₀ = k_z0²·|φ⊥(k_z0ϑ)|²,   φ⊥(k) = e^{−k²/(4Δk⊥²)} / (√(2π)·Δk⊥)
//! cx = +2R(ϑ)·sin φ,  cy = −2R(ϑ)·cos φ,  R = r_e·k_z0²·𝓛(ϑ)·e^{−k_z0²ϑ²/(4Δk⊥²)} / (π·Δk⊥)
//! ```
//!
//! The kernel `𝓛` is radial and smooth, so it is tabulated once on a fine
//! 1-D grid and interpolated per pixel.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridKind, ProbabilityMap};
use crate::kernel::{check_varsigma, kernel_at_kperp_many, KernelContext};
use crate::specfun::UniformTable;

pub use crate::grid::differential_map;

/// Zero-deflection density `Π₀(ϑ)` (per steradian).
pub fn pi0_diff(theta: f64, ctx: &KernelContext) -> Result<f64> {
    if theta.is_nan() || theta < 0.0 {
        return Err(Error::Domain(format!("pi0_diff needs theta >= 0, got {theta}")));
    }
    Ok(pi0_unchecked(theta, ctx))
}

fn pi0_unchecked(theta: f64, ctx: &KernelContext) -> f64 {
    let (k, dk) = (ctx.k(), ctx.dk());
    let x = k * theta;
    k * k * (-x * x / (2.0 * dk * dk)).exp() / (2.0 * PI * dk * dk)
}

/// `u⃗*(φ)·e⃗_{z,−ς}` with `u⃗*(φ) = (−sin φ, cos φ, 0)` and
/// `e⃗_{z,∓1} = (e⃗x ∓ i e⃗y)/√2`. Zero for the elastic channel.
pub fn azimuthal_factor(phi: f64, varsigma: i32) -> Complex64 {
    if varsigma == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let (s, c) = phi.sin_cos();
    Complex64::new(-s, -(varsigma as f64) * c) * FRAC_1_SQRT_2
}

/// Radial amplitude `R(ϑ)` of the interference terms.
fn radial_amplitude(theta: f64, kernel: f64, ctx: &KernelContext) -> f64 {
    let (k, dk) = (ctx.k(), ctx.dk());
    let x = k * theta;
    ctx.r_e() * k * k * kernel * (-x * x / (4.0 * dk * dk)).exp() / (PI * dk)
}

/// Spin-flip interference density `Π_{z,ς}(ϑ⃗)`, with the kernel evaluated directly.
pub fn pi_z_diff(theta_vec: (f64, f64), ctx: &KernelContext, varsigma: i32) -> Result<Complex64> {
    check_varsigma(varsigma)?;
    let theta = theta_vec.0.hypot(theta_vec.1);
    let kern = crate::kernel::kernel_at_kperp(ctx.k() * theta, ctx.dk(), ctx.spin.a0);
    let phi = theta_vec.1.atan2(theta_vec.0);
    let pref = if varsigma == 0 { 0.0 } else { -std::f64::consts::SQRT_2 };
    Ok(pref * radial_amplitude(theta, kern, ctx) * azimuthal_factor(phi, varsigma))
}

/// Cubic-interpolated cache of `𝓛(ϑ)` at `z_p = 0`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    table: UniformTable<f64>,
    pub theta_max: f64,
}

impl KernelTable {
    /// Table on `[0, theta_max]` with step at most Δk⊥/(50·k_z0).
    pub fn build(ctx: &KernelContext, theta_max: f64) -> Result<Self> {
        if !(theta_max > 0.0) {
            return Err(Error::Domain("kernel table needs theta_max > 0".into()));
        }
        let step_cap = ctx.dk() / (50.0 * ctx.k());
        let n = ((theta_max / step_cap).ceil() as usize).max(8) + 3;
        let step = theta_max / (n - 3) as f64;
        let ks: Vec<f64> = (0..n).map(|i| ctx.k() * step * i as f64).collect();
        let values = kernel_at_kperp_many(&ks, ctx.dk(), ctx.spin.a0);
        Ok(Self { table: UniformTable::new(step, values), theta_max })
    }

    pub fn step(&self) -> f64 {
        self.table.step
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.table.eval(theta)
    }
}

/// `(p0, cx, cy)` at one detector angle using a prepared kernel table.
pub fn coefficients_at(tx: f64, ty: f64, table: &KernelTable, ctx: &KernelContext) -> (f64, f64, f64) {
    let theta = tx.hypot(ty);
    let p0 = pi0_unchecked(theta, ctx);
    if theta == 0.0 {
        return (p0, 0.0, 0.0);
    }
    let r = radial_amplitude(theta, table.eval(theta), ctx);
    let (s, c) = (ty / theta, tx / theta);
    (p0, 2.0 * r * s, -2.0 * r * c)
}

/// Square angular grid covering the validity disk `ϑ ≤ 8Δk⊥/k_z0`.
pub fn disk_grid(ctx: &KernelContext, n: usize) -> Result<Grid> {
    let t = ctx.theta_cut();
    Grid::new(GridKind::Angular, t, n, Some(t))
}

/// Simulation grid aligned with a detector of the given pixel pitch: the
/// detector spans `round(2ϑ_cut/pixel)` pixels per side and each detector
/// pixel holds `sub × sub` samples.
pub fn detector_grid(ctx: &KernelContext, pixel: f64, sub: usize) -> Result<Grid> {
    if !(pixel > 0.0) || sub == 0 {
        return Err(Error::Domain("detector grid needs pixel > 0 and sub >= 1".into()));
    }
    let t = ctx.theta_cut();
    let npx = (2.0 * t / pixel).round() as usize;
    if npx == 0 {
        return Err(Error::Domain("detector pixel larger than the validity disk".into()));
    }
    Grid::new(GridKind::Angular, 0.5 * npx as f64 * pixel, npx * sub, Some(t))
}

/// First-order diffraction map on `grid`. Pixels outside the grid's cut
/// radius are zero and flagged as outside.
pub fn p_diff_map(grid: &Grid, ctx: &KernelContext) -> Result<ProbabilityMap> {
    if grid.kind != GridKind::Angular {
        return Err(Error::Domain("diffraction maps need an angular grid".into()));
    }
    let table = KernelTable::build(ctx, grid.max_radius() * 1.001)?;
    let n = grid.len();
    let rows: Vec<(f64, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|j| {
            if !grid.inside(j) {
                return (0.0, 0.0, 0.0, false);
            }
            let (x, y) = grid.center(j);
            let (p0, cx, cy) = coefficients_at(x, y, &table, ctx);
            (p0, cx, cy, true)
        })
        .collect();
    let mut map = ProbabilityMap {
        grid: *grid,
        p0: Vec::with_capacity(n),
        cx: Vec::with_capacity(n),
        cy: Vec::with_capacity(n),
        inside: Vec::with_capacity(n),
    };
    for (p0, cx, cy, ins) in rows {
        map.p0.push(p0);
        map.cx.push(cx);
        map.cy.push(cy);
        map.inside.push(ins);
    }
    Ok(map)
}
