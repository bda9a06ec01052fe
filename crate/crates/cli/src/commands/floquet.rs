//! `floquet`: phase-diffusion coherence estimates along a power list.

use anyhow::Result;
use serde::Serialize;

use kerrcomb::dynamics::find_limit_cycle;
use kerrcomb::floquet::{floquet_eigensystem, fundamental_matrix, phase_diffusion};
use kerrcomb::units::hz_from_rad_per_us;

use super::Ctx;
use crate::output::{fmt_f64, Bundle};
use crate::svg;

#[derive(Debug, Serialize)]
struct FloquetRecord {
    power_dbm: f64,
    period_us: f64,
    spacing_hz: f64,
    mu_re: [f64; 4],
    mu_im: [f64; 4],
    mu0_abs_times_period: f64,
    biorthonormality_residual: f64,
    p0_velocity_angle_rad: f64,
    r_eff: f64,
    delta_n: f64,
    t_coh_floquet_us: f64,
    imag_fraction: f64,
}

pub fn floquet_cmd(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let fc = &ctx.cfg.floquet;
    let offset = ctx.cfg.system.drive_offset_db;

    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut reff_pts = Vec::new();
    let mut dn_pts = Vec::new();
    for &dbm in &fc.powers_dbm {
        let driven = p.with_eta(p.eta_from_power_dbm(dbm, offset));
        let run = || -> kerrcomb::error::Result<FloquetRecord> {
            let lc = find_limit_cycle(&driven, fc.settle_us, fc.closure_tol)?;
            let fm = fundamental_matrix(&lc, &driven, fc.n_samples)?;
            let fs = floquet_eigensystem(&fm, &driven)?;
            let pd = phase_diffusion(&fs, &driven);
            Ok(FloquetRecord {
                power_dbm: dbm,
                period_us: fs.period,
                spacing_hz: hz_from_rad_per_us(pd.spacing),
                mu_re: fs.exponents.map(|m| m.re),
                mu_im: fs.exponents.map(|m| m.im),
                mu0_abs_times_period: fs.exponents[0].norm() * fs.period,
                biorthonormality_residual: fs.biorthonormality_residual,
                p0_velocity_angle_rad: fs.p0_velocity_angle,
                r_eff: pd.r_eff,
                delta_n: pd.delta_n,
                t_coh_floquet_us: pd.t_coh,
                imag_fraction: pd.imag_fraction,
            })
        };
        match run() {
            Ok(rec) => {
                rows.push(vec![
                    fmt_f64(rec.power_dbm),
                    fmt_f64(rec.period_us),
                    fmt_f64(rec.spacing_hz),
                    fmt_f64(rec.r_eff),
                    fmt_f64(rec.delta_n),
                    fmt_f64(rec.t_coh_floquet_us),
                    fmt_f64(rec.mu0_abs_times_period),
                ]);
                reff_pts.push((dbm, rec.r_eff));
                dn_pts.push((dbm, rec.delta_n));
                records.push(rec);
            }
            Err(e) => bundle.record_error(format!("floquet at {dbm} dBm"), e.to_string()),
        }
    }
    bundle.write_json("floquet.json", &records)?;
    bundle.write_csv(
        "floquet.csv",
        "power_dbm,period_us,spacing_hz,r_eff,delta_n,t_coh_floquet_us,mu0_abs_times_period",
        &rows,
    )?;

    if ctx.plot && !reff_pts.is_empty() {
        let svg = svg::lines(
            "limit-cycle radius and projected noise vs drive",
            "power (dBm)",
            "r_eff / delta_n",
            &[("r_eff", reff_pts.as_slice()), ("delta_n", dn_pts.as_slice())],
        );
        bundle.write_raw("floquet.svg", svg.as_bytes())?;
    }
    Ok(())
}
