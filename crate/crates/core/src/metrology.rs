//! Fisher information, Cramér–Rao SNR bounds, defocus/region sweeps and
//! ensemble feasibility scaling.
//!
//! With `P = P₀ + r_e·(…)` linear in `μ_B ∝ r_e`, the classical Fisher
//! information per electron reduces to
//! `μ_B²·CFI ≈ ∫_X P₁²/P₀ d²ξ` where `P₁ = cx·sx + cy·sy`. It is evaluated as
//! a midpoint pixel sum over the map grid, the way a detector integrates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffraction::{disk_grid, p_diff_map};
use crate::error::{Error, Result};
use crate::grid::{Grid, ProbabilityMap};
use crate::imaging::{p_img_map, MaskFunction, SpatialGrid};
use crate::kernel::KernelContext;
use crate::params::PhysConsts;
use crate::specfun::erf;
use crate::spin::BlochState;

/// Default electron dose, one second at 1.6 nA rounded to 10¹⁰.
pub const N_E_DEFAULT: f64 = 1e10;
/// Default beam current (A).
pub const DEFAULT_CURRENT: f64 = 1.6e-9;
/// Literature SVEA limit of `μ_B²·CFI` for the broad (110 nm) beam, quoted for
/// comparison only.
pub const SVEA_CFI_BROAD: f64 = 4.64e-14;
/// Literature QFI-derived limit of `μ_B²·CFI` at Δr⊥ = 8.92 a₀, quoted for
/// comparison only.
pub const QFI_CFI_NARROW: f64 = 1.37e-10;

/// Pixels whose `P₀` falls below this fraction of the map peak are excluded
/// from the Fisher sum.
pub const P0_FLOOR: f64 = 1e-30;

/// Electrons per second carried by a beam current.
pub fn electron_rate(current: f64, consts: &PhysConsts) -> f64 {
    current / consts.e_charge
}

/// Detection region inside a map grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// Every pixel flagged as inside the map.
    Full,
    /// Pixel centres with radius ≤ `radius`.
    Disk { radius: f64 },
    /// Pixel centres with |x|, |y| ≤ `half_width`.
    Square { half_width: f64 },
}

impl Region {
    pub fn contains(&self, grid: &Grid, j: usize) -> bool {
        if !grid.inside(j) {
            return false;
        }
        let (x, y) = grid.center(j);
        match *self {
            Region::Full => true,
            Region::Disk { radius } => x.hypot(y) <= radius,
            Region::Square { half_width } => x.abs() <= half_width && y.abs() <= half_width,
        }
    }
}

/// Fisher information of one map and region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfiReport {
    pub mu_b2_cfi: f64,
    pub region: Region,
    /// Fraction of the incident electrons landing in the region, `Σ P₀·dA`.
    pub detected_fraction: f64,
    /// `√(rate·μ_B²CFI)` at [`DEFAULT_CURRENT`], in s^(−1/2).
    pub snr_bound_per_sqrt_s: f64,
    pub pixels: usize,
    /// Region pixels skipped because `P₀` was below the floor.
    pub excluded_pixels: usize,
}

// Fixed chunking keeps the parallel sum bit-reproducible.
const CHUNK: usize = 4096;

fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| (c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f).sum())
        .collect();
    partial.iter().sum()
}

/// `μ_B²·CFI` of `map` for Bloch vector `bloch` over `region`.
pub fn cfi(map: &ProbabilityMap, bloch: &BlochState, region: &Region) -> Result<CfiReport> {
    cfi_at_current(map, bloch, region, DEFAULT_CURRENT, &PhysConsts::default())
}

pub fn cfi_at_current(
    map: &ProbabilityMap,
    bloch: &BlochState,
    region: &Region,
    current: f64,
    consts: &PhysConsts,
) -> Result<CfiReport> {
    let g = &map.grid;
    let members: Vec<usize> = (0..g.len()).filter(|&j| region.contains(g, j)).collect();
    if members.is_empty() {
        return Err(Error::EmptyRegion(format!("{region:?} selects no pixel")));
    }
    let peak = members.iter().map(|&j| map.p0[j]).fold(0.0, f64::max);
    let floor = P0_FLOOR * peak;
    let excluded = members.iter().filter(|&&j| !(map.p0[j] > floor)).count();
    let (sx, sy) = (bloch.s[0], bloch.s[1]);
    let da = g.pixel_area();
    let info = chunked_sum(members.len(), |i| {
        let j = members[i];
        let p0 = map.p0[j];
        if !(p0 > floor) {
            return 0.0;
        }
        let p1 = map.cx[j] * sx + map.cy[j] * sy;
        p1 * p1 / p0
    }) * da;
    let detected = chunked_sum(members.len(), |i| map.p0[members[i]]) * da;
    Ok(CfiReport {
        mu_b2_cfi: info,
        region: *region,
        detected_fraction: detected.clamp(0.0, 1.0),
        snr_bound_per_sqrt_s: (electron_rate(current, consts) * info).sqrt(),
        pixels: members.len(),
        excluded_pixels: excluded,
    })
}

/// Cramér–Rao bound `SNR ≤ √(N_e·μ_B²CFI)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrBound {
    pub n_e: f64,
    pub snr: f64,
}

pub fn snr_bound(report: &CfiReport, n_e: f64) -> Result<SnrBound> {
    if !(n_e >= 0.0) {
        return Err(Error::Domain("electron count must be non-negative".into()));
    }
    Ok(SnrBound { n_e, snr: (n_e * report.mu_b2_cfi).sqrt() })
}

/// Fraction `erf(√2·x_max·Δk⊥)²` of a Gaussian beam inside `[−x_max, x_max]²`.
pub fn detected_fraction(x_max: f64, dk_perp: f64) -> Result<f64> {
    if !(x_max > 0.0) || !(dk_perp > 0.0) {
        return Err(Error::Domain("detected_fraction needs x_max > 0 and dk_perp > 0".into()));
    }
    Ok(erf(std::f64::consts::SQRT_2 * x_max * dk_perp).powi(2))
}

/// SNR of `n_spins` aligned spins imaged together: `n·rate·√t`.
pub fn ensemble_snr(n_spins_polarized: f64, snr1_rate: f64, t_acq: f64) -> Result<f64> {
    if !(n_spins_polarized >= 0.0) || !(snr1_rate >= 0.0) || !(t_acq >= 0.0) {
        return Err(Error::Domain("ensemble_snr needs non-negative inputs".into()));
    }
    Ok(n_spins_polarized * snr1_rate * t_acq.sqrt())
}

/// Image-plane contrast mechanism for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    Defocused,
    Zernike,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub z_d: f64,
    pub x_max: f64,
    pub mu_b2_cfi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub mode: ImageMode,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn get(&self, z_d: f64, x_max: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.z_d == z_d && r.x_max == x_max).map(|r| r.mu_b2_cfi)
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

/// CFI over a (z_d, x_max) lattice. One map per defocus is computed at the
/// largest `x_max` with pixel pitch `spacing`; smaller windows are nested
/// square sub-regions of it, so the x_max dependence is free of resampling noise.
pub fn defocus_region_sweep(
    ctx: &KernelContext,
    z_ds: &[f64],
    x_maxs: &[f64],
    mode: ImageMode,
    spacing: f64,
    mask: &MaskFunction,
) -> Result<SweepTable> {
    if z_ds.is_empty() || x_maxs.is_empty() || !strictly_increasing(x_maxs) || !strictly_increasing(z_ds) {
        return Err(Error::Domain("sweep needs non-empty, strictly increasing value lists".into()));
    }
    if !(spacing > 0.0) {
        return Err(Error::Domain("sweep spacing must be positive".into()));
    }
    let x_top = *x_maxs.last().unwrap();
    let n = ((2.0 * x_top / spacing).round() as usize).max(2);
    let on_res = BlochState { s: [0.0, 1.0, 0.0] };
    let mut rows = Vec::with_capacity(z_ds.len() * x_maxs.len());
    for &z_d in z_ds {
        let grid = SpatialGrid::new(0.5 * n as f64 * spacing, n, z_d)?;
        let map = p_img_map(&grid, ctx, mask, mode == ImageMode::Zernike)?;
        for &x_max in x_maxs {
            let region = Region::Square { half_width: x_max };
            let r = cfi(&map, &on_res, &region)?;
            rows.push(SweepRow { z_d, x_max, mu_b2_cfi: r.mu_b2_cfi });
        }
    }
    Ok(SweepTable { mode, rows })
}

/// Diffraction-mode CFI against collection half-angle, all on one map of the
/// validity disk sampled with `n` pixels per side.
pub fn collection_angle_sweep(ctx: &KernelContext, theta_maxs: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
    if theta_maxs.is_empty() || !strictly_increasing(theta_maxs) {
        return Err(Error::Domain("sweep needs a non-empty, strictly increasing angle list".into()));
    }
    let map = p_diff_map(&disk_grid(ctx, n)?, ctx)?;
    let on_res = BlochState { s: [0.0, 1.0, 0.0] };
    theta_maxs
        .iter()
        .map(|&t| Ok((t, cfi(&map, &on_res, &Region::Disk { radius: t })?.mu_b2_cfi)))
        .collect()
}
