//! Classical analyses: fixed points, phase diagram, comb spectra, Lyapunov
//! classification.

use anyhow::Result;
use rayon::prelude::*;

use kerrcomb::dynamics::integrate_classical;
use kerrcomb::lyapunov::{default_delta_tau, max_lyapunov, LyapunovOpts};
use kerrcomb::params::PhaseState;
use kerrcomb::spectrum::power_spectrum;
use kerrcomb::steady::{phase_diagram, steady_states, DetuningGrid};
use kerrcomb::units::hz_from_rad_per_us;
use kerrcomb::Error;

use super::Ctx;
use crate::output::{fmt_f64, Bundle};
use crate::svg;

/// `fixed-points`: steady states over the configured power sweep at the
/// configured detuning point.
pub fn fixed_points(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let offset = ctx.cfg.system.drive_offset_db;
    let mut rows = Vec::new();
    for dbm in ctx.cfg.sweep.power_dbm.values() {
        let eta = p.eta_from_power_dbm(dbm, offset);
        match steady_states(&p.with_eta(eta)) {
            Ok(sol) => {
                for fp in &sol.fixed_points {
                    rows.push(vec![
                        fmt_f64(dbm),
                        fmt_f64(eta),
                        fmt_f64(fp.n_b),
                        fmt_f64(fp.alpha.re),
                        fmt_f64(fp.alpha.im),
                        fmt_f64(fp.beta.re),
                        fmt_f64(fp.beta.im),
                        fmt_f64(fp.max_re_eig),
                        (fp.stable as u8).to_string(),
                        (fp.marginal as u8).to_string(),
                        (sol.degenerate as u8).to_string(),
                        fmt_f64(fp.residual),
                    ]);
                }
            }
            Err(e) => bundle.record_error(format!("power {dbm} dBm"), e.to_string()),
        }
    }
    bundle.write_csv(
        "fixed_points.csv",
        "power_dbm,eta,n_b,re_alpha,im_alpha,re_beta,im_beta,max_re_eig,stable,marginal,degenerate,residual",
        &rows,
    )?;
    Ok(())
}

/// `phase-diagram`: classification grid over (Δ_da, Δ_db) with the power
/// sweep folded into each cell.
pub fn phase_diagram_cmd(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let sweep = &ctx.cfg.sweep;
    let powers = sweep.power_dbm.values();
    let grid = DetuningGrid {
        delta_da: sweep
            .delta_da_hz
            .values()
            .into_iter()
            .map(kerrcomb::units::rad_per_us_from_hz)
            .collect(),
        delta_db: sweep
            .delta_db_hz
            .values()
            .into_iter()
            .map(kerrcomb::units::rad_per_us_from_hz)
            .collect(),
    };
    let cells = phase_diagram(&p, &grid, &powers, ctx.cfg.system.drive_offset_db);

    let p_min = powers.iter().cloned().fold(f64::INFINITY, f64::min);
    let p_max = powers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        match (&cell.class, &cell.error) {
            (Some(c), _) => rows.push(vec![
                fmt_f64(hz_from_rad_per_us(cell.delta_da)),
                fmt_f64(hz_from_rad_per_us(cell.delta_db)),
                fmt_f64(p_min),
                fmt_f64(p_max),
                c.label.as_str().to_string(),
                c.fp_count_range.0.to_string(),
                c.fp_count_range.1.to_string(),
                c.sfp_count_range.0.to_string(),
                c.sfp_count_range.1.to_string(),
            ]),
            (None, Some(e)) => bundle.record_error(
                format!(
                    "cell ({:.3e}, {:.3e}) Hz",
                    hz_from_rad_per_us(cell.delta_da),
                    hz_from_rad_per_us(cell.delta_db)
                ),
                e.clone(),
            ),
            (None, None) => {}
        }
    }
    bundle.write_csv(
        "phase_diagram.csv",
        "delta_da_hz,delta_db_hz,power_dbm_min,power_dbm_max,label,fp_min,fp_max,sfp_min,sfp_max",
        &rows,
    )?;

    if ctx.plot {
        let nx = grid.delta_da.len();
        let ny = grid.delta_db.len();
        let values: Vec<Option<f64>> = cells
            .iter()
            .map(|c| {
                c.class.as_ref().map(|cl| match cl.label {
                    kerrcomb::steady::PhaseLabel::OneSfp => 0.0,
                    kerrcomb::steady::PhaseLabel::MultiFp => 0.5,
                    kerrcomb::steady::PhaseLabel::NoSfpSubset => 1.0,
                })
            })
            .collect();
        // Cells are Δ_da-outer/Δ_db-inner; plot with Δ_db on x.
        let mut transposed = vec![None; values.len()];
        for ia in 0..nx {
            for ib in 0..ny {
                transposed[ib * nx + ia] = values[ia * ny + ib];
            }
        }
        let svg = svg::heatmap(
            "phase classification (0 = one SFP, 0.5 = multi FP, 1 = no-SFP subset)",
            "delta_db",
            "delta_da",
            ny,
            nx,
            &transposed,
        );
        bundle.write_raw("phase_diagram.svg", svg.as_bytes())?;
    }
    Ok(())
}

/// `spectrum`: comb spectra and detected spacings along the power list at
/// the configured detuning point.
pub fn spectrum_cmd(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let sc = &ctx.cfg.spectrum;
    let offset = ctx.cfg.system.drive_offset_db;

    let results: Vec<_> = sc
        .powers_dbm
        .par_iter()
        .map(|&dbm| {
            let driven = p.with_eta(p.eta_from_power_dbm(dbm, offset));
            let traj = integrate_classical(
                &driven,
                &PhaseState::origin(),
                sc.record_us,
                sc.tol,
                sc.sample_dt_us,
            )?;
            power_spectrum(&traj, sc.settle_us, driven.omega_d).map(|s| (dbm, s))
        })
        .collect();

    let mut spacing_rows = Vec::new();
    let mut plots: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in results {
        match r {
            Ok((dbm, spec)) => {
                let name = format!("spectrum_{}dbm.csv", fmt_dbm(dbm));
                let rows: Vec<Vec<String>> = spec
                    .freq_hz
                    .iter()
                    .zip(spec.power_db.iter())
                    .map(|(&f, &pw)| vec![fmt_f64(f), fmt_f64(pw)])
                    .collect();
                bundle.write_csv(&name, "freq_hz,power_db", &rows)?;
                spacing_rows.push(vec![
                    fmt_f64(dbm),
                    spec.spacing_hz.map(fmt_f64).unwrap_or_else(|| "".into()),
                    spec.peak_indices.len().to_string(),
                    fmt_f64(spec.confidence),
                    fmt_f64(spec.equidistance_residual_bins),
                ]);
                if ctx.plot {
                    let pts: Vec<(f64, f64)> = spec
                        .freq_hz
                        .iter()
                        .zip(spec.power_db.iter())
                        .map(|(&f, &pw)| (f / 1e9, pw.max(-120.0)))
                        .collect();
                    plots.push((format!("{dbm} dBm"), pts));
                }
            }
            Err(e) => bundle.record_error("spectrum", e.to_string()),
        }
    }
    bundle.write_csv(
        "spacings.csv",
        "power_dbm,spacing_hz,n_peaks,confidence,equidistance_residual_bins",
        &spacing_rows,
    )?;
    if ctx.plot && !plots.is_empty() {
        let series: Vec<(&str, &[(f64, f64)])> =
            plots.iter().map(|(n, p)| (n.as_str(), p.as_slice())).collect();
        let svg = svg::lines("output power spectra", "frequency (GHz)", "power (dB)", &series);
        bundle.write_raw("spectra.svg", svg.as_bytes())?;
    }
    Ok(())
}

fn fmt_dbm(dbm: f64) -> String {
    format!("{dbm:.2}").replace('-', "m").replace('.', "p")
}

/// `lyapunov`: λ_M over the (power, Δ_db) grid at the configured Δ_da.
pub fn lyapunov_cmd(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let lc = &ctx.cfg.lyapunov;
    let offset = ctx.cfg.system.drive_offset_db;
    let powers = lc.power_dbm.values();
    let dbs = lc.delta_db_hz.values();

    let cells: Vec<(f64, f64)> = powers
        .iter()
        .flat_map(|&pw| dbs.iter().map(move |&db| (pw, db)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(dbm, db_hz)| {
            let driven = p
                .with_delta_db(kerrcomb::units::rad_per_us_from_hz(db_hz))
                .with_eta(p.eta_from_power_dbm(dbm, offset));
            let dt = if lc.delta_tau_us > 0.0 { lc.delta_tau_us } else { default_delta_tau(&driven) };
            let opts = LyapunovOpts {
                transient: lc.transient_us,
                tol: lc.tol,
                epsilon_lambda: 0.0,
            };
            let res = max_lyapunov(&driven, &PhaseState::origin(), dt, lc.n_iterates, &opts);
            (dbm, db_hz, res)
        })
        .collect();

    let mut rows = Vec::new();
    let mut cellvals = vec![None; cells.len()];
    for (i, (dbm, db_hz, res)) in results.into_iter().enumerate() {
        match res {
            Ok(r) => {
                rows.push(vec![
                    fmt_f64(dbm),
                    fmt_f64(db_hz),
                    fmt_f64(r.lambda_m),
                    r.class.as_str().to_string(),
                    (r.converged as u8).to_string(),
                ]);
                cellvals[i] = Some(r.lambda_m.clamp(-100.0, 100.0));
            }
            Err(Error::NonConverged { overall, .. }) => {
                rows.push(vec![
                    fmt_f64(dbm),
                    fmt_f64(db_hz),
                    fmt_f64(overall),
                    "NON_CONVERGED".into(),
                    "0".into(),
                ]);
                bundle.record_error(
                    format!("lyapunov ({dbm} dBm, {db_hz:.3e} Hz)"),
                    "running mean not converged".to_string(),
                );
            }
            Err(e) => bundle.record_error(
                format!("lyapunov ({dbm} dBm, {db_hz:.3e} Hz)"),
                e.to_string(),
            ),
        }
    }
    bundle.write_csv("lyapunov.csv", "power_dbm,delta_db_hz,lambda_m,class,converged", &rows)?;

    if ctx.plot {
        let svg = svg::heatmap(
            "maximal Lyapunov exponent (1/us)",
            "delta_db",
            "drive power",
            dbs.len(),
            powers.len(),
            &{
                // Reindex (power outer, db inner) -> (db outer, power inner).
                let mut t = vec![None; cellvals.len()];
                for ip in 0..powers.len() {
                    for ib in 0..dbs.len() {
                        t[ib * powers.len() + ip] = cellvals[ip * dbs.len() + ib];
                    }
                }
                t
            },
        );
        bundle.write_raw("lyapunov.svg", svg.as_bytes())?;
    }
    Ok(())
}
