//! `spintem`: run scattering-map simulations, Fisher-information estimates,
//! mask optimization and backaction estimates from the command line.
//!
//! Every run writes its artifacts plus one `manifest.json` into the output
//! directory. Inputs are SI; outputs use μrad for angles and Å for lengths.
//!
//! Exit status: 0 on success, 1 on a runtime failure, 2 on a usage or
//! configuration error, 3 when a validity condition fails without
//! `--allow-invalid`.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::CommonArgs;

/// Failures that map to dedicated exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Validity(String),
}

impl std::error::Error for CliError {}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Validity(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    Diffraction,
    Image,
    Zernike,
    Coherent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Diffraction,
    Image,
    Zernike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DetuningSet {
    /// The four detunings {0, 0.025, 0.05, 0.075}·ω₀.
    #[value(name = "table-b1")]
    TableB1,
}

#[derive(Parser)]
#[command(name = "spintem", version, about = "Electron-probed single-spin resonance simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Probability maps and differential maps.
    ///
    /// Writes map_<k>.csv with columns (theta_x_urad, theta_y_urad | x_angstrom,
    /// y_angstrom), p0, cx, cy, differential, one file per prepared state, and
    /// differential_<k>.pgm. Densities are per rad² (diffraction) or per m²
    /// (image). Coherent mode writes coherent.csv (x_angstrom, y_angstrom,
    /// amplitude, phase_rad) with amplitude.pgm and phase.pgm.
    Simulate {
        #[arg(value_enum)]
        mode: MapMode,
        /// Simulate the preset detuning set instead of --detuning.
        #[arg(long, value_enum)]
        detuning_sweep: Option<DetuningSet>,
    },
    /// μ_B²·CFI over the whole map; writes cfi.json.
    Cfi {
        #[arg(long, value_enum, default_value = "diffraction")]
        mode: MapMode,
        /// Electron count for the Cramér–Rao bound.
        #[arg(long, default_value_t = commands::DEFAULT_N_E)]
        n_e: f64,
    },
    /// CFI against region size; writes sweep.csv.
    ///
    /// Image modes: columns z_d_angstrom, x_max_angstrom, mu_b2_cfi.
    /// Diffraction: theta_max_urad, mu_b2_cfi.
    CfiSweep {
        #[arg(long, value_enum, default_value = "image")]
        mode: SweepMode,
        /// Defocus values (m), comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [200e-10, 400e-10, 800e-10])]
        zd_list: Vec<f64>,
        /// Region half-widths (m), comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = [2.5e-10, 5e-10, 10e-10, 15e-10, 20e-10])]
        xmax_list: Vec<f64>,
        /// Map sampling pitch (m).
        #[arg(long, default_value_t = 0.1e-10)]
        spacing: f64,
    },
    /// Pixelate, optimize the threshold mask and optionally run Poisson
    /// experiments.
    ///
    /// Writes pixels.csv (pixel, coordinates, n0, n1, snr_px, selected),
    /// trace.csv (threshold, pixels, total_snr), mask.pgm, n1.pgm and with
    /// --replicas also estimates.csv (replica, ratio).
    MaskOpt {
        #[arg(long, value_enum, default_value = "diffraction")]
        mode: MapMode,
        #[arg(long, default_value_t = commands::DEFAULT_N_E)]
        n_e: f64,
        /// Number of synthetic driven/reference experiments.
        #[arg(long, default_value_t = 0)]
        replicas: usize,
    },
    /// Spin purity loss per electron; writes backaction.json.
    Backaction,
    /// End states of π/2 pulses; writes bloch.csv (detuning_over_omega0, sx, sy, sz).
    BlochSweep {
        /// Detunings δ/ω₀, comma separated (default: the four study values).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        detunings: Vec<f64>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let p = config::resolve(&cli.common)?;
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.command {
        Command::Simulate { mode, detuning_sweep } => {
            let name = format!("simulate {}", mode.to_possible_value().unwrap().get_name());
            commands::simulate(&p, mode, detuning_sweep.is_some(), &name)
        }
        Command::Cfi { mode, n_e } => commands::cfi_cmd(&p, mode, n_e, "cfi"),
        Command::CfiSweep { mode, zd_list, xmax_list, spacing } => {
            commands::cfi_sweep(&p, mode, &zd_list, &xmax_list, spacing, "cfi-sweep")
        }
        Command::MaskOpt { mode, n_e, replicas } => commands::mask_opt(&p, mode, n_e, replicas, "mask-opt"),
        Command::Backaction => commands::backaction(&p, "backaction"),
        Command::BlochSweep { detunings } => commands::bloch_sweep(&p, &detunings, "bloch-sweep"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<CliError>() {
                Some(CliError::Config(_)) => ExitCode::from(2),
                Some(CliError::Validity(_)) => ExitCode::from(3),
                None => ExitCode::FAILURE,
            }
        }
    }
}
