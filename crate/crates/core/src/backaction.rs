//! Spin purity loss caused by one passing electron.
//!
//! In scaled variables `q̃ = q⊥/(2Δk⊥)`, `z̃ = 2zΔk⊥`:
//!
//! ```text
//! ΔP = 4 r_e² (2Δk⊥)² ∫dq̃ ∫dq̃′ I_es(q̃) I_es(q̃′) ∫dz̃ g(z̃)
//!      · exp[−(1+c)(q̃ − q̃′)²/2] · i1e((1+c) q̃ q̃′)
//! ```
//!
//! with `g` the normalized longitudinal Gaussian of width `1/Δk̃_z`,
//! `Δk̃_z = Δk_z/Δk⊥`, and `c = z̃²/(4k̃²)`, `k̃ = k_z0/(2Δk⊥)`. The product
//! `exp(−(q̃²+q̃′²)/2)·I₁(q̃q̃′)` is evaluated in the recombined scaled form.
//!
//! For the on-resonance preparation the off-diagonal spin coherence after
//! the passage vanishes: `⟨s₁|σ_{z,±}|↑_y⟩ = (i/2)(δ_{s₁,↓_y} ± δ_{s₁,↑_y})`
//! makes the two ς contributions cancel in ρ(↑_y, ↓_y), so the purity loss is
//! the only first-order effect.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{form_factor, KernelContext};
use crate::specfun::{i1e, CompositeRule};

/// Quadrature settings for [`purity_loss_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackactionOptions {
    /// Upper limit of q̃ (before the form-factor bound `10·k_a/(2Δk⊥)`).
    pub q_cut: f64,
    /// Width of each q̃ panel.
    pub panel_width: f64,
    /// Gauss–Legendre nodes per panel and for the z̃ rule.
    pub nodes: usize,
    /// Half-width of the z̃ domain in units of `1/Δk̃_z`.
    pub z_span: f64,
}

impl Default for BackactionOptions {
    fn default() -> Self {
        Self { q_cut: 16.0, panel_width: 4.0, nodes: 64, z_span: 8.0 }
    }
}

impl BackactionOptions {
    fn validate(&self) -> Result<()> {
        if !(self.q_cut > 0.0) || !(self.panel_width > 0.0) || self.nodes < 2 || !(self.z_span > 0.0) {
            return Err(Error::Domain(format!("invalid backaction quadrature options {self:?}")));
        }
        Ok(())
    }
}

/// Per-electron purity loss and quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub delta_p: f64,
    /// Upper q̃ limit actually used.
    pub q_max: f64,
    pub options: BackactionOptions,
    /// Relative change against the same panels at half the node count.
    pub rel_error_estimate: f64,
    pub converged: bool,
}

impl PurityReport {
    /// First-order purity `1 − N·ΔP` after `n_electrons` passages.
    pub fn cumulative(&self, n_electrons: f64) -> f64 {
        1.0 - n_electrons * self.delta_p
    }
}

/// Purity loss with the default quadrature.
pub fn purity_loss(ctx: &KernelContext) -> Result<PurityReport> {
    purity_loss_with(ctx, &BackactionOptions::default())
}

pub fn purity_loss_with(ctx: &KernelContext, opts: &BackactionOptions) -> Result<PurityReport> {
    opts.validate()?;
    let dk = ctx.dk();
    let q_max = opts.q_cut.min(10.0 * ctx.spin.k_a() / (2.0 * dk));
    let fine = scaled_integral(ctx, q_max, opts, opts.nodes);
    let coarse = scaled_integral(ctx, q_max, opts, opts.nodes / 2);
    let rel = ((fine - coarse) / fine).abs();
    let r_e = ctx.r_e();
    let delta_p = 4.0 * r_e * r_e * (2.0 * dk).powi(2) * fine;
    Ok(PurityReport {
        delta_p,
        q_max,
        options: *opts,
        rel_error_estimate: rel,
        converged: rel < 1e-6 && delta_p.is_finite(),
    })
}

/// The dimensionless triple integral.
fn scaled_integral(ctx: &KernelContext, q_max: f64, opts: &BackactionOptions, nodes: usize) -> f64 {
    let dk = ctx.dk();
    let a0 = ctx.spin.a0;
    let dkz = ctx.beam.dk_z / dk;
    let kt = ctx.k() / (2.0 * dk);

    let panels = (q_max / opts.panel_width).ceil().max(1.0) as usize;
    let breaks: Vec<f64> = (0..=panels).map(|i| (i as f64 * opts.panel_width).min(q_max)).collect();
    let q = CompositeRule::from_breakpoints(&breaks, nodes);
    let zs = opts.z_span / dkz;
    let z = CompositeRule::uniform(-zs, zs, 1, nodes);

    let ies: Vec<f64> = q.nodes.iter().map(|&x| form_factor(a0, 2.0 * dk * x)).collect();
    let zw: Vec<(f64, f64)> = z
        .nodes
        .iter()
        .zip(&z.weights)
        .map(|(&zt, &w)| {
            let g = dkz / (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * zt * zt * dkz * dkz).exp();
            (1.0 + zt * zt / (4.0 * kt * kt), w * g)
        })
        .collect();

    // One row per outer node, summed in index order for a reproducible total.
    let rows: Vec<f64> = (0..q.len())
        .into_par_iter()
        .map(|i| {
            let qi = q.nodes[i];
            let mut row = 0.0;
            for j in 0..q.len() {
                let qj = q.nodes[j];
                let d2 = (qi - qj) * (qi - qj);
                let zsum: f64 = zw.iter().map(|&(s, wz)| wz * (-0.5 * s * d2).exp() * i1e(s * qi * qj)).sum();
                row += q.weights[j] * ies[j] * zsum;
            }
            q.weights[i] * ies[i] * row
        })
        .collect();
    rows.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BeamPreset;

    /// Plain trapezoid rule on an `n³` lattice, written without the
    /// scaled-Bessel helper.
    fn trapezoid_oracle(ctx: &KernelContext, q_max: f64, n: usize) -> f64 {
        let dk = ctx.dk();
        let dkz = ctx.beam.dk_z / dk;
        let kt = ctx.k() / (2.0 * dk);
        let zs = 8.0 / dkz;
        let tw = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let hq = q_max / (n - 1) as f64;
        let hz = 2.0 * zs / (n - 1) as f64;
        let ies = |x: f64| {
            let d = 4.0 + (ctx.spin.a0 * 2.0 * dk * x).powi(2);
            16.0 / (d * d)
        };
        let mut total = 0.0;
        for iz in 0..n {
            let zt = -zs + iz as f64 * hz;
            let g = dkz / (2.0 * std::f64::consts::PI).sqrt() * (-0.5 * zt * zt * dkz * dkz).exp();
            let s = 1.0 + zt * zt / (4.0 * kt * kt);
            let mut inner = 0.0;
            for i in 0..n {
                let a = i as f64 * hq;
                for j in 0..n {
                    let b = j as f64 * hq;
                    // exp(−s(a²+b²)/2)·I₁(s·a·b) via its series, stable here
                    // because s·a·b stays moderate on the oracle's domain.
                    let x = s * a * b;
                    let mut term = 0.5 * x;
                    let mut i1 = term;
                    for m in 1..200 {
                        term *= 0.25 * x * x / (m as f64 * (m + 1) as f64);
                        i1 += term;
                        if term < 1e-17 * i1 {
                            break;
                        }
                    }
                    let v = (-0.5 * s * (a * a + b * b)).exp() * i1;
                    inner += tw(i) * tw(j) * ies(a) * ies(b) * v;
                }
            }
            total += tw(iz) * g * inner * hq * hq;
        }
        total * hz
    }

    #[test]
    fn matches_tabulated_values() {
        for (p, expect) in [(BeamPreset::Broad, 3.81e-14), (BeamPreset::Mid, 3.79e-12), (BeamPreset::Narrow, 2.71e-10)] {
            let r = purity_loss(&KernelContext::preset(p)).unwrap();
            assert!((r.delta_p / expect - 1.0).abs() < 0.1, "{p:?}: {}", r.delta_p);
            assert!(r.converged, "{r:?}");
        }
    }

    #[test]
    fn narrow_beam_matches_trapezoid_oracle() {
        let ctx = KernelContext::preset(BeamPreset::Narrow);
        // Oracle domain kept at q̃ ≤ 8 so the series stays accurate.
        let opts = BackactionOptions { q_cut: 8.0, ..Default::default() };
        let r = purity_loss_with(&ctx, &opts).unwrap();
        let dk = ctx.dk();
        let oracle = 4.0 * ctx.r_e().powi(2) * (2.0 * dk).powi(2) * trapezoid_oracle(&ctx, r.q_max, 200);
        assert!((r.delta_p / oracle - 1.0).abs() < 1e-3, "{} vs {oracle}", r.delta_p);
    }

    #[test]
    fn scales_with_r_e_squared() {
        let ctx = KernelContext::preset(BeamPreset::Mid);
        let a = purity_loss(&ctx).unwrap().delta_p;
        let b = purity_loss(&ctx.with_r_e(2.0 * ctx.r_e())).unwrap().delta_p;
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn monotone_in_focus() {
        let mut last = 0.0;
        for i in 0..5 {
            let dk = 1.06e7 * 10f64.powf(0.5 * i as f64);
            let ctx = KernelContext::canonical().with_dk_perp(dk).unwrap();
            let v = purity_loss(&ctx).unwrap().delta_p;
            assert!(v > last, "{dk}: {v}");
            last = v;
        }
    }

    #[test]
    fn cumulative_purity() {
        let r = purity_loss(&KernelContext::preset(BeamPreset::Narrow)).unwrap();
        let loss = 1.0 - r.cumulative(1e8);
        assert!(loss > 0.01 && loss < 0.05, "{loss}");
        assert_eq!(r.cumulative(0.0), 1.0);
    }

    #[test]
    fn rejects_bad_options() {
        let ctx = KernelContext::canonical();
        let bad = BackactionOptions { nodes: 1, ..Default::default() };
        assert!(purity_loss_with(&ctx, &bad).is_err());
    }
}
