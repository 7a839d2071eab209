//! Run configuration: an optional TOML file, overridden by command-line flags,
//! resolved into one flat parameter set that is echoed in the manifest.

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use serde::{Deserialize, Serialize};
use spintem::params::{default_params_200keV, BeamParams, BeamPreset, SpinParams};
use spintem::KernelContext;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub beam: BeamSection,
    pub spin: SpinSection,
    pub grid: GridSection,
    pub pulse: PulseSection,
    pub output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub preset: Option<String>,
    pub k_z0: Option<f64>,
    pub dk_perp: Option<f64>,
    pub dk_z: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinSection {
    pub a0: Option<f64>,
    pub omega0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub n: Option<usize>,
    pub x_max: Option<f64>,
    pub z_d: Option<f64>,
    pub pixel: Option<f64>,
    pub sub: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub rabi: Option<f64>,
    pub detuning: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub fn load(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())).into())
}

/// Flags shared by every subcommand. All lengths in m, angles in rad.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run configuration ([beam], [spin], [grid], [pulse], [output]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Beam preset: 200keV-broad, 200keV-mid or 200keV-narrow.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Transverse momentum width Δk⊥ (1/m); overrides the preset.
    #[arg(long, global = true)]
    pub dk_perp: Option<f64>,
    /// Central wavenumber k_z0 (1/m).
    #[arg(long, global = true)]
    pub k_z0: Option<f64>,
    /// Longitudinal momentum width Δk_z (1/m).
    #[arg(long, global = true)]
    pub dk_z: Option<f64>,
    /// Orbital radius of the spin density (m).
    #[arg(long, global = true)]
    pub a0: Option<f64>,
    /// Larmor frequency ω₀ (rad/s).
    #[arg(long, global = true)]
    pub omega0: Option<f64>,
    /// Samples per side of the simulation grid.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Half-width of the image region (m).
    #[arg(long, global = true)]
    pub xmax: Option<f64>,
    /// Defocus z_d (m).
    #[arg(long, global = true)]
    pub zd: Option<f64>,
    /// Detector pixel pitch (rad in diffraction mode, m in image mode).
    #[arg(long, global = true)]
    pub pixel: Option<f64>,
    /// Simulation samples per detector pixel along each axis.
    #[arg(long, global = true)]
    pub sub: Option<usize>,
    /// Rabi frequency as a fraction of ω₀.
    #[arg(long, global = true)]
    pub rabi: Option<f64>,
    /// Detuning δ/ω₀ of the prepared state.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub detuning: Option<f64>,
    /// Output directory (default: $SPINTEM_OUT, then ./spintem-out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for synthetic experiments.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run even when a required validity condition fails.
    #[arg(long, global = true)]
    pub allow_invalid: bool,
}

/// Fully resolved parameters, in SI.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub preset: Option<String>,
    pub k_z0: f64,
    pub dk_perp: f64,
    pub dk_z: f64,
    pub a0: f64,
    pub omega0: f64,
    pub n: Option<usize>,
    pub x_max: f64,
    /// Unset means the mode default: 800 Å, or 0 for Zernike imaging.
    pub z_d: Option<f64>,
    pub pixel: Option<f64>,
    pub sub: usize,
    pub rabi: f64,
    pub detuning: f64,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub allow_invalid: bool,
}

impl Resolved {
    pub fn defocus(&self, zernike: bool) -> f64 {
        self.z_d.unwrap_or(if zernike { 0.0 } else { 800e-10 })
    }

    pub fn context(&self) -> Result<KernelContext> {
        let (consts, _, spin) = default_params_200keV();
        let bad = |e: spintem::Error| CliError::Config(e.to_string());
        let beam = BeamParams::new(self.k_z0, self.dk_perp, self.dk_z, 0.0).map_err(bad)?;
        let spin = SpinParams { a0: self.a0, omega0: self.omega0, ..spin };
        Ok(KernelContext::new(beam, spin, consts).map_err(bad)?)
    }
}

pub fn resolve(args: &CommonArgs) -> Result<Resolved> {
    let file = match &args.config {
        Some(p) => load(p)?,
        None => FileConfig::default(),
    };
    let preset_name = args.preset.clone().or(file.beam.preset.clone());
    let preset = match &preset_name {
        Some(name) => BeamPreset::from_name(name)
            .ok_or_else(|| CliError::Config(format!("unknown preset `{name}` (expected 200keV-broad, 200keV-mid or 200keV-narrow)")))?,
        None => BeamPreset::Broad,
    };
    let (_, beam, spin) = spintem::params::preset_params(preset);
    let pick = |flag: Option<f64>, cfg: Option<f64>, dflt: f64| flag.or(cfg).unwrap_or(dflt);
    let out = args
        .out
        .clone()
        .or(file.output.dir.clone())
        .or_else(|| std::env::var_os("SPINTEM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("spintem-out"));
    Ok(Resolved {
        preset: Some(preset.name().to_string()),
        k_z0: pick(args.k_z0, file.beam.k_z0, beam.k_z0),
        dk_perp: pick(args.dk_perp, file.beam.dk_perp, beam.dk_perp),
        dk_z: pick(args.dk_z, file.beam.dk_z, beam.dk_z),
        a0: pick(args.a0, file.spin.a0, spin.a0),
        omega0: pick(args.omega0, file.spin.omega0, spin.omega0),
        n: args.n.or(file.grid.n),
        x_max: pick(args.xmax, file.grid.x_max, 10e-10),
        z_d: args.zd.or(file.grid.z_d),
        pixel: args.pixel.or(file.grid.pixel),
        sub: args.sub.or(file.grid.sub).unwrap_or(4),
        rabi: pick(args.rabi, file.pulse.rabi, spintem::spin::STUDY_RABI),
        detuning: pick(args.detuning, file.pulse.detuning, 0.0),
        seed: args.seed.or(file.output.seed).unwrap_or(1),
        out,
        allow_invalid: args.allow_invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = toml::from_str::<FileConfig>("[beam]\ndk_prep = 1e7\n").unwrap_err().to_string();
        assert!(err.contains("dk_prep"), "{err}");
        let err = toml::from_str::<FileConfig>("[beems]\n").unwrap_err().to_string();
        assert!(err.contains("beems"), "{err}");
    }

    #[test]
    fn flags_override_file_and_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[beam]\npreset = \"200keV-narrow\"\n[grid]\nz_d = 4e-8\n").unwrap();
        let args = CommonArgs { config: Some(path), zd: Some(1e-8), ..Default::default() };
        let r = resolve(&args).unwrap();
        assert_eq!(r.dk_perp, 1.06e9);
        assert_eq!(r.z_d, Some(1e-8));
        assert_eq!(r.x_max, 10e-10);
    }
}
