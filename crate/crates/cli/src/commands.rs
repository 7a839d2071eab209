use anyhow::Result;
use serde_json::json;
use spintem::analysis::{monte_carlo, optimize_mask, pixelate, snr_px, MaskSelection, PixelImage};
use spintem::backaction::purity_loss;
use spintem::diffraction::{detector_grid, disk_grid, p_diff_map};
use spintem::grid::{GridKind, ProbabilityMap};
use spintem::imaging::{coherent_wavefunction, p_img_map_with_diagnostics, MaskFunction, SpatialGrid};
use spintem::kernel::{validity_checks, ValidityCheck};
use spintem::metrology::{
    cfi, collection_angle_sweep, defocus_region_sweep, snr_bound, ImageMode, Region, N_E_DEFAULT,
};
use spintem::spin::{detuning_sweep, reference_state, STUDY_DETUNINGS};
use spintem::{BlochState, KernelContext};

use crate::config::Resolved;
use crate::output::{range_window, symmetric_window, Run};
use crate::{CliError, MapMode, SweepMode};

/// Output scale for angles (μrad) and lengths (Å).
fn unit_scale(kind: GridKind) -> f64 {
    match kind {
        GridKind::Angular => 1e6,
        GridKind::Spatial => 1e10,
    }
}

fn coord_names(kind: GridKind) -> [&'static str; 2] {
    match kind {
        GridKind::Angular => ["theta_x_urad", "theta_y_urad"],
        GridKind::Spatial => ["x_angstrom", "y_angstrom"],
    }
}

fn checked_context(p: &Resolved) -> Result<(KernelContext, Vec<ValidityCheck>)> {
    let ctx = p.context()?;
    let checks = validity_checks(&ctx);
    let failed: Vec<&ValidityCheck> = checks.iter().filter(|c| c.required && !c.passed).collect();
    if !failed.is_empty() && !p.allow_invalid {
        let why: Vec<String> = failed.iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        return Err(CliError::Validity(format!(
            "validity condition failed: {}; pass --allow-invalid to run anyway",
            why.join("; ")
        ))
        .into());
    }
    Ok((ctx, checks))
}

fn states(p: &Resolved, table_b1: bool) -> Result<Vec<(f64, BlochState)>> {
    let deltas: Vec<f64> = if table_b1 { STUDY_DETUNINGS.to_vec() } else { vec![p.detuning] };
    let abs: Vec<f64> = deltas.iter().map(|d| d * p.omega0).collect();
    let s = detuning_sweep(&abs, p.rabi * p.omega0, p.omega0)?;
    Ok(deltas.into_iter().zip(s).collect())
}

fn build_map(p: &Resolved, ctx: &KernelContext, mode: MapMode, run: &mut Run) -> Result<ProbabilityMap> {
    match mode {
        MapMode::Diffraction => {
            let grid = match p.pixel {
                Some(px) => detector_grid(ctx, px, p.sub)?,
                None => disk_grid(ctx, p.n.unwrap_or(512))?,
            };
            Ok(p_diff_map(&grid, ctx)?)
        }
        MapMode::Image | MapMode::Zernike => {
            let z_d = p.defocus(mode == MapMode::Zernike);
            let grid = match p.pixel {
                Some(px) => SpatialGrid::for_detector(p.x_max, px, p.sub, z_d)?,
                None => SpatialGrid::new(p.x_max, p.n.unwrap_or(400), z_d)?,
            };
            let (map, diag) = p_img_map_with_diagnostics(&grid, ctx, &MaskFunction::default(), mode == MapMode::Zernike)?;
            if diag.interpolation_error > 1e-6 {
                run.warnings.push(format!("radial table interpolation error {:.2e}", diag.interpolation_error));
            }
            Ok(map)
        }
        MapMode::Coherent => Err(CliError::Config("coherent mode has no probability map".into()).into()),
    }
}

pub fn simulate(p: &Resolved, mode: MapMode, table_b1: bool, command: &str) -> Result<()> {
    let (ctx, checks) = checked_context(p)?;
    let mut run = Run::new(&p.out)?;
    if mode == MapMode::Coherent {
        return coherent(p, &ctx, checks, run, command);
    }
    let map = build_map(p, &ctx, mode, &mut run)?;
    let g = map.grid;
    let scale = unit_scale(g.kind);
    let [xn, yn] = coord_names(g.kind);
    let reference = reference_state();
    let mut results = Vec::new();
    for (k, (delta, s)) in states(p, table_b1)?.into_iter().enumerate() {
        let diff = map.differential(&s, &reference);
        let dens = map.density(&s);
        if dens.clipped > 0 {
            run.warnings
                .push(format!("state {k}: {} negative density samples clipped (worst {:.3e})", dens.clipped, dens.worst));
        }
        let rows = (0..g.len()).map(|j| {
            let (x, y) = g.center(j);
            vec![x * scale, y * scale, map.p0[j], map.cx[j], map.cy[j], diff[j]]
        });
        run.csv(&format!("map_{k}.csv"), &[xn, yn, "p0", "cx", "cy", "differential"], rows)?;
        run.pgm(&format!("differential_{k}.pgm"), &diff, g.n, symmetric_window(&diff))?;
        results.push(json!({
            "index": k, "detuning_over_omega0": delta, "bloch": s.s,
            "clipped": dens.clipped, "worst_clip": dens.worst,
        }));
    }
    finish(run, command, p, checks, json!({ "grid": g, "states": results }))
}

fn coherent(p: &Resolved, ctx: &KernelContext, checks: Vec<ValidityCheck>, mut run: Run, command: &str) -> Result<()> {
    let z = p.defocus(false);
    let grid = SpatialGrid::new(p.x_max, p.n.unwrap_or(256), z)?;
    let field = coherent_wavefunction(&grid, z, ctx, &MaskFunction::default())?;
    let g = field.grid;
    let (amp, phase) = (field.amplitude(), field.phase());
    let rows = (0..g.len()).map(|j| {
        let (x, y) = g.center(j);
        vec![x * 1e10, y * 1e10, amp[j], phase[j]]
    });
    run.csv("coherent.csv", &["x_angstrom", "y_angstrom", "amplitude", "phase_rad"], rows)?;
    run.pgm("amplitude.pgm", &amp, g.n, range_window(&amp))?;
    run.pgm("phase.pgm", &phase, g.n, [-std::f64::consts::PI, std::f64::consts::PI])?;
    let results = json!({ "grid": g, "longitudinal_norm": field.norm, "discrete_norm": field.discrete_norm() });
    finish(run, command, p, checks, results)
}

pub fn cfi_cmd(p: &Resolved, mode: MapMode, n_e: f64, command: &str) -> Result<()> {
    if mode == MapMode::Coherent {
        return Err(CliError::Config("cfi supports diffraction, image and zernike modes".into()).into());
    }
    let (ctx, checks) = checked_context(p)?;
    let mut run = Run::new(&p.out)?;
    let map = build_map(p, &ctx, mode, &mut run)?;
    let s = states(p, false)?[0].1;
    let report = cfi(&map, &s, &Region::Full)?;
    if report.excluded_pixels > 0 {
        run.warnings.push(format!("{} pixels below the P0 floor excluded", report.excluded_pixels));
    }
    let bound = snr_bound(&report, n_e)?;
    let value = json!({ "mode": mode, "bloch": s.s, "report": report, "snr_bound": bound });
    run.json("cfi.json", &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    finish(run, command, p, checks, value)
}

pub fn cfi_sweep(p: &Resolved, mode: SweepMode, zds: &[f64], xmaxs: &[f64], spacing: f64, command: &str) -> Result<()> {
    let (ctx, checks) = checked_context(p)?;
    let mut run = Run::new(&p.out)?;
    let rows: Vec<Vec<f64>> = match mode {
        SweepMode::Diffraction => {
            let thetas: Vec<f64> = (1..=16).map(|i| 0.5 * i as f64 * ctx.dk() / ctx.k()).collect();
            collection_angle_sweep(&ctx, &thetas, p.n.unwrap_or(512))?
                .into_iter()
                .map(|(t, v)| vec![t * 1e6, v])
                .collect()
        }
        SweepMode::Image | SweepMode::Zernike => {
            let m = if mode == SweepMode::Zernike { ImageMode::Zernike } else { ImageMode::Defocused };
            let t = defocus_region_sweep(&ctx, zds, xmaxs, m, spacing, &MaskFunction::default())?;
            t.rows.iter().map(|r| vec![r.z_d * 1e10, r.x_max * 1e10, r.mu_b2_cfi]).collect()
        }
    };
    let header: &[&str] = match mode {
        SweepMode::Diffraction => &["theta_max_urad", "mu_b2_cfi"],
        _ => &["z_d_angstrom", "x_max_angstrom", "mu_b2_cfi"],
    };
    run.csv("sweep.csv", header, rows.clone())?;
    finish(run, command, p, checks, json!({ "mode": mode, "rows": rows.len() }))
}

fn pixel_rows(img: &PixelImage, mask: &MaskSelection) -> Vec<Vec<f64>> {
    let snr = snr_px(img);
    let scale = unit_scale(img.grid.kind);
    (0..img.len())
        .map(|j| {
            let (x, y) = img.grid.center(j);
            let sel = if mask.selected[j] { 1.0 } else { 0.0 };
            vec![j as f64, x * scale, y * scale, img.n0[j], img.n1[j], snr[j], sel]
        })
        .collect()
}

pub fn mask_opt(p: &Resolved, mode: MapMode, n_e: f64, replicas: usize, command: &str) -> Result<()> {
    if mode == MapMode::Coherent {
        return Err(CliError::Config("mask-opt supports diffraction, image and zernike modes".into()).into());
    }
    let (ctx, checks) = checked_context(p)?;
    let pixel = p.pixel.ok_or_else(|| CliError::Config("mask-opt needs --pixel (or [grid] pixel)".into()))?;
    let mut run = Run::new(&p.out)?;
    let map = build_map(p, &ctx, mode, &mut run)?;
    let s = states(p, false)?[0].1;
    let img = pixelate(&map, &s, &reference_state(), n_e, pixel)?;
    if img.first_order_violations > 0 {
        run.warnings.push(format!("{} pixels with |n1| > 0.1 n0", img.first_order_violations));
    }
    let mask = optimize_mask(&img)?;
    let [xn, yn] = coord_names(img.grid.kind);
    run.csv("pixels.csv", &["pixel", xn, yn, "n0", "n1", "snr_px", "selected"], pixel_rows(&img, &mask))?;
    let trace = mask.trace.iter().map(|t| vec![t.threshold, t.pixels as f64, t.total_snr]);
    run.csv("trace.csv", &["threshold", "pixels", "total_snr"], trace)?;
    let sel: Vec<f64> = mask.selected.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    run.pgm("mask.pgm", &sel, img.grid.n, [0.0, 1.0])?;
    run.pgm("n1.pgm", &img.n1, img.grid.n, symmetric_window(&img.n1))?;
    let mut results = json!({
        "mode": mode, "n_e": n_e, "pixels": img.len(), "selected": mask.count(),
        "threshold": mask.threshold, "total_snr": mask.total_snr, "tie_break": "larger mask",
    });
    if replicas > 0 {
        let mc = monte_carlo(&img, &mask, replicas, p.seed)?;
        results["monte_carlo"] = json!({
            "replicas": mc.replicas, "seed": p.seed, "mean": mc.mean, "std": mc.std,
            "std_err": mc.std_err, "predicted_std": mc.predicted_std,
        });
        run.csv("estimates.csv", &["replica", "ratio"], mc.ratios.iter().enumerate().map(|(i, r)| vec![i as f64, *r]))?;
    }
    println!("{}", serde_json::to_string_pretty(&results)?);
    finish(run, command, p, checks, results)
}

pub fn backaction(p: &Resolved, command: &str) -> Result<()> {
    let (ctx, checks) = checked_context(p)?;
    let mut run = Run::new(&p.out)?;
    let r = purity_loss(&ctx)?;
    if !r.converged {
        run.warnings.push(format!("purity-loss quadrature not converged (rel. change {:.2e})", r.rel_error_estimate));
    }
    let value = json!({ "report": r, "purity_after_1e8_electrons": r.cumulative(1e8) });
    run.json("backaction.json", &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    finish(run, command, p, checks, value)
}

pub fn bloch_sweep(p: &Resolved, detunings: &[f64], command: &str) -> Result<()> {
    let mut run = Run::new(&p.out)?;
    let deltas: Vec<f64> = if detunings.is_empty() { STUDY_DETUNINGS.to_vec() } else { detunings.to_vec() };
    let abs: Vec<f64> = deltas.iter().map(|d| d * p.omega0).collect();
    let s = detuning_sweep(&abs, p.rabi * p.omega0, p.omega0)?;
    let rows = deltas.iter().zip(&s).map(|(d, s)| vec![*d, s.s[0], s.s[1], s.s[2]]);
    run.csv("bloch.csv", &["detuning_over_omega0", "sx", "sy", "sz"], rows)?;
    finish(run, command, p, Vec::new(), json!({ "states": s.len() }))
}

fn finish(run: Run, command: &str, p: &Resolved, checks: Vec<ValidityCheck>, results: serde_json::Value) -> Result<()> {
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    let path = run.finish(command, p, checks, results)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

pub const DEFAULT_N_E: f64 = N_E_DEFAULT;
