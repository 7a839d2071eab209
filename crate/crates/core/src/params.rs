//! Physical constants and the beam/spin parameter sets shared by every module.
//!
//! Everything here is SI. The canonical configuration is a 200 keV electron
//! beam probing an unpaired electron in a hydrogen-like 1s orbital with a
//! 0.208 meV Zeeman splitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fundamental constants (CODATA 2018).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysConsts {
    /// Classical electron radius in m.
    pub r_e: f64,
    /// Bohr magneton in J/T.
    pub mu_b: f64,
    /// Reduced Planck constant in J·s.
    pub hbar: f64,
    /// Electron mass in kg.
    pub m_e: f64,
    /// Speed of light in m/s.
    pub c: f64,
    /// Elementary charge in C.
    pub e_charge: f64,
}

/// Vacuum permeability in N/A².
pub const MU_0: f64 = 1.256_637_062_12e-6;

impl Default for PhysConsts {
    fn default() -> Self {
        let hbar = 1.054_571_817e-34;
        let e_charge = 1.602_176_634e-19;
        let mu_b = 9.274_010_078_3e-24;
        Self {
            r_e: e_charge * MU_0 * mu_b / (2.0 * std::f64::consts::PI * hbar),
            mu_b,
            hbar,
            m_e: 9.109_383_701_5e-31,
            c: 299_792_458.0,
            e_charge,
        }
    }
}

impl PhysConsts {
    /// Copy with a different interaction strength. `r_e` is proportional to the
    /// magnetic moment, so this is how a nuclear-spin probe or a scaling test
    /// is set up.
    pub fn with_r_e(mut self, r_e: f64) -> Self {
        self.r_e = r_e;
        self
    }

    /// Wavenumber of an electron with the given kinetic energy (J).
    pub fn wavenumber_from_kinetic(&self, e_kin: f64) -> f64 {
        let mc2 = self.m_e * self.c * self.c;
        let pc = (e_kin * (e_kin + 2.0 * mc2)).sqrt();
        pc / (self.hbar * self.c)
    }
}

/// Incident Gaussian wavepacket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamParams {
    /// Mean longitudinal wavenumber (m⁻¹).
    pub k_z0: f64,
    /// Transverse momentum spread Δk⊥ (m⁻¹).
    pub dk_perp: f64,
    /// Longitudinal momentum spread Δk_z (m⁻¹).
    pub dk_z: f64,
    /// Incident-beam defocus z_p (m).
    pub z_p: f64,
}

/// Upper bound on Δk⊥/k_z0 for the paraxial treatment.
pub const PARAXIAL_LIMIT: f64 = 1e-2;

impl BeamParams {
    pub fn new(k_z0: f64, dk_perp: f64, dk_z: f64, z_p: f64) -> Result<Self> {
        let b = Self { k_z0, dk_perp, dk_z, z_p };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.k_z0, self.dk_perp, self.dk_z, self.z_p].iter().all(|v| v.is_finite());
        if !finite || self.k_z0 <= 0.0 || self.dk_perp <= 0.0 || self.dk_z <= 0.0 {
            return Err(Error::InvalidParams(
                "k_z0, dk_perp and dk_z must be positive and finite".into(),
            ));
        }
        if self.dk_perp / self.k_z0 > PARAXIAL_LIMIT {
            return Err(Error::InvalidParams(format!(
                "dk_perp/k_z0 = {:.3e} exceeds the paraxial limit {PARAXIAL_LIMIT:e}",
                self.dk_perp / self.k_z0
            )));
        }
        if self.dk_z / self.k_z0 > PARAXIAL_LIMIT {
            return Err(Error::InvalidParams("dk_z must be much smaller than k_z0".into()));
        }
        if self.dk_perp >= self.dk_z * 1e3 {
            return Err(Error::InvalidParams("dk_perp must stay below 10³·dk_z".into()));
        }
        Ok(())
    }

    /// Transverse beam radius Δr⊥ = 1/(2Δk⊥).
    pub fn dr_perp(&self) -> f64 {
        0.5 / self.dk_perp
    }

    /// Full width at half maximum of the transverse intensity profile.
    pub fn fwhm(&self) -> f64 {
        2.3548 * self.dr_perp()
    }

    pub fn gamma0(&self, c: &PhysConsts) -> f64 {
        let p = c.hbar * self.k_z0 / (c.m_e * c.c);
        (1.0 + p * p).sqrt()
    }

    /// Total relativistic energy E₀ = γ₀ m_e c².
    pub fn e0(&self, c: &PhysConsts) -> f64 {
        self.gamma0(c) * c.m_e * c.c * c.c
    }

    /// Group velocity v₀ = ħ c² k_z0 / E₀.
    pub fn v0(&self, c: &PhysConsts) -> f64 {
        c.hbar * c.c * c.c * self.k_z0 / self.e0(c)
    }

    /// Copy with a new transverse spread.
    pub fn with_dk_perp(mut self, dk_perp: f64) -> Self {
        self.dk_perp = dk_perp;
        self
    }
}

/// Spin under study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinParams {
    /// Spatial extent of the bound electron (Bohr radius for a 1s orbital).
    pub a0: f64,
    /// Larmor angular frequency (rad/s).
    pub omega0: f64,
    /// Bloch vector (⟨σx⟩, ⟨σy⟩, ⟨σz⟩).
    pub bloch: [f64; 3],
}

impl SpinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.a0 > 0.0) || !(self.omega0 > 0.0) {
            return Err(Error::InvalidParams("a0 and omega0 must be positive".into()));
        }
        let n = self.bloch.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n <= 1.0 + 1e-12) {
            return Err(Error::InvalidParams(format!("|bloch| = {n} exceeds 1")));
        }
        Ok(())
    }

    /// Spin localization wavenumber k_a = 1/a₀.
    pub fn k_a(&self) -> f64 {
        1.0 / self.a0
    }

    /// Energy-transfer wavenumber δk = sqrt(γ₀ m_e ω₀ / ħ).
    pub fn delta_k(&self, beam: &BeamParams, c: &PhysConsts) -> f64 {
        (beam.gamma0(c) * c.m_e * self.omega0 / c.hbar).sqrt()
    }
}

/// Named beam configurations spanning the transverse spreads studied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeamPreset {
    /// Δk⊥ = 1.06·10⁷ m⁻¹ (FWHM ≈ 110 nm).
    Broad,
    /// Δk⊥ = 1.06·10⁸ m⁻¹ (FWHM ≈ 11 nm).
    Mid,
    /// Δk⊥ = 1.06·10⁹ m⁻¹ (FWHM ≈ 1.1 nm).
    Narrow,
}

impl BeamPreset {
    pub fn dk_perp(self) -> f64 {
        match self {
            BeamPreset::Broad => 1.06e7,
            BeamPreset::Mid => 1.06e8,
            BeamPreset::Narrow => 1.06e9,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BeamPreset::Broad => "200keV-broad",
            BeamPreset::Mid => "200keV-mid",
            BeamPreset::Narrow => "200keV-narrow",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "200keV-broad" => Some(BeamPreset::Broad),
            "200keV-mid" => Some(BeamPreset::Mid),
            "200keV-narrow" => Some(BeamPreset::Narrow),
            _ => None,
        }
    }
}

/// Kinetic energy of the canonical beam (J).
pub const E_KIN_200KEV: f64 = 200e3 * 1.602_176_634e-19;
/// Zeeman splitting ħω₀ of the canonical spin (J).
pub const HBAR_OMEGA0: f64 = 0.208e-3 * 1.602_176_634e-19;
/// Bohr radius (m).
pub const BOHR_RADIUS: f64 = 5.291_772_109_03e-11;

/// Canonical 200 keV configuration with the broad (110 nm FWHM) beam and a
/// spin prepared along +y.
#[allow(non_snake_case)]
pub fn default_params_200keV() -> (PhysConsts, BeamParams, SpinParams) {
    let c = PhysConsts::default();
    let beam = BeamParams { k_z0: 2.51e12, dk_perp: 1.06e7, dk_z: 1.06e7, z_p: 0.0 };
    let spin = SpinParams { a0: BOHR_RADIUS, omega0: HBAR_OMEGA0 / c.hbar, bloch: [0.0, 1.0, 0.0] };
    (c, beam, spin)
}

/// Canonical configuration for a named preset.
pub fn preset_params(p: BeamPreset) -> (PhysConsts, BeamParams, SpinParams) {
    let (c, beam, spin) = default_params_200keV();
    (c, beam.with_dk_perp(p.dk_perp()), spin)
}
