//! Stochastic coherence runs: the G¹ pipeline at one operating point and
//! coherence-time sweeps over nonlinearity scalings with the law fit.

use anyhow::{anyhow, Result};
use serde::Serialize;

use kerrcomb::coherence::{
    apply_filter, fit_tcoh_law, g1_and_coherence, output_correlation, steady_correlations,
    FilterSpec, G1Result,
};
use kerrcomb::model::scale_transform;
use kerrcomb::params::PhaseState;
use kerrcomb::sde::{simulate_ensemble, EnsembleSpec};
use kerrcomb::units::{hz_from_rad_per_us, rad_per_us_from_hz};
use kerrcomb::SystemParams;

use super::Ctx;
use crate::config::SdeConfig;
use crate::output::{fmt_f64, Bundle};
use crate::svg;

/// Outcome of one full coherence pipeline run at (possibly scaled)
/// parameters.
#[derive(Debug, Clone, Serialize)]
pub struct CoherenceOutcome {
    /// Nonlinearity multiplier m = Λ_run/Λ_device.
    pub lambda_scale: f64,
    /// Scaled-run coherence time (µs).
    pub t_coh_scaled_us: f64,
    /// Mapped back to device nonlinearity via the 1/Λ law (µs).
    pub t_coh_unscaled_us: f64,
    pub r2: f64,
    pub model: String,
    pub n_peaks: usize,
    pub f_sideband_hz: f64,
    pub excluded_fraction: f64,
    pub weak_noise_violated: bool,
    pub n_traj: usize,
    pub seed: u64,
    pub gamma_phi_scaled: f64,
}

/// Runs ensemble → correlations → output filter → G¹ at parameters scaled
/// by `lambda_scale` (Λ multiplied, drive reduced, per the invariance
/// transformation). `gamma_phi_scaled` (rad/µs) applies to the scaled run.
pub fn coherence_pipeline(
    base: &SystemParams,
    sde: &SdeConfig,
    filter: &FilterSpec,
    lambda_scale: f64,
    gamma_phi_scaled: f64,
    power_dbm: f64,
    offset_db: f64,
    seed: u64,
) -> Result<(CoherenceOutcome, G1Result)> {
    let mut p = *base;
    p.gamma_phi = 0.0;
    let p = p.with_eta(p.eta_from_power_dbm(power_dbm, offset_db));
    let (mut ps, _) = scale_transform(&p, &PhaseState::origin(), 1.0 / lambda_scale)
        .map_err(|e| anyhow!(e.to_string()))?;
    ps.gamma_phi = gamma_phi_scaled;

    let mut spec = EnsembleSpec::new(&ps, sde.n_traj, seed);
    if sde.dt_us > 0.0 {
        spec.dt = sde.dt_us;
        spec.sample_every = (0.002 / spec.dt).round().max(1.0) as usize;
    }
    if sde.sample_every > 0 {
        spec.sample_every = sde.sample_every;
    }
    spec.t_ss = sde.t_ss_us;
    spec.t_window = sde.t_window_us;
    spec.t_corr = sde.t_corr_us;
    spec.batch_size = sde.batch_size;
    spec.steadiness_check = sde.steadiness_check;

    let ensemble = simulate_ensemble(&ps, &spec).map_err(|e| anyhow!(e.to_string()))?;
    let corr = steady_correlations(&ensemble).map_err(|e| anyhow!(e.to_string()))?;
    let out = output_correlation(&corr, ps.kappa);
    let filt = apply_filter(&out, filter).map_err(|e| anyhow!(e.to_string()))?;
    let g1 = g1_and_coherence(&filt).map_err(|e| anyhow!(e.to_string()))?;

    let outcome = CoherenceOutcome {
        lambda_scale,
        t_coh_scaled_us: g1.t_coh,
        t_coh_unscaled_us: g1.t_coh * lambda_scale,
        r2: g1.r2,
        model: format!("{:?}", g1.model),
        n_peaks: g1.n_peaks,
        f_sideband_hz: filt.f_sideband_hz,
        excluded_fraction: ensemble.spiked_fraction,
        weak_noise_violated: ensemble.weak_noise_violated,
        n_traj: spec.n_traj,
        seed,
        gamma_phi_scaled,
    };
    Ok((outcome, g1))
}

/// `sde-g1`: one coherence run at the configured operating point; emits the
/// G¹ trace and a JSON result record.
pub fn sde_g1(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let sde = &ctx.cfg.sde;
    let gamma_phi_scaled = if sde.gamma_phi_hz > 0.0 {
        rad_per_us_from_hz(sde.gamma_phi_hz)
    } else {
        0.0
    };
    let (outcome, g1) = coherence_pipeline(
        &p,
        sde,
        &ctx.cfg.filter.spec(),
        1.0 / sde.scale_k,
        gamma_phi_scaled,
        sde.power_dbm,
        ctx.cfg.system.drive_offset_db,
        ctx.seed,
    )?;

    // Envelope-fit trace alongside G¹ per sample.
    let rate = 1.0 / g1.t_coh;
    let rows: Vec<Vec<String>> = g1
        .tau
        .iter()
        .zip(g1.g1.iter())
        .map(|(&t, &v)| vec![fmt_f64(t), fmt_f64(v), fmt_f64((-rate * t).exp())])
        .collect();
    bundle.write_csv("g1.csv", "tau_us,g1,envelope_fit", &rows)?;
    bundle.write_json("coherence.json", &outcome)?;

    if ctx.plot {
        let g1_pts: Vec<(f64, f64)> =
            g1.tau.iter().zip(g1.g1.iter()).map(|(&t, &v)| (t, v)).collect();
        let env_pts: Vec<(f64, f64)> =
            g1.tau.iter().zip(g1.envelope.iter()).map(|(&t, &v)| (t, v)).collect();
        let svg = svg::lines(
            "temporal coherence",
            "tau (us)",
            "G1",
            &[("G1", g1_pts.as_slice()), ("envelope", env_pts.as_slice())],
        );
        bundle.write_raw("g1.svg", svg.as_bytes())?;
    }
    Ok(())
}

/// `tcoh-sweep`: coherence times over nonlinearity multipliers at fixed
/// scaled dephasing, with the coherence-law fit.
pub fn tcoh_sweep(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let p = ctx.cfg.system.params()?;
    let tc = &ctx.cfg.tcoh;
    let sde = &ctx.cfg.sde;
    let gamma_phi_scaled = rad_per_us_from_hz(tc.gamma_phi_hz);

    let mut rows = Vec::new();
    let mut points = Vec::new();
    let mut curve = Vec::new();
    for (i, &scale) in tc.lambda_scales.iter().enumerate() {
        // Window lengths sized from the expected coherence time.
        let lambda_run = p.lambda * scale;
        let t_guess = 1.2 / (gamma_phi_scaled + 1.2 * lambda_run);
        let mut run_cfg = sde.clone();
        run_cfg.t_corr_us = (1.7 * t_guess + 0.15).clamp(0.35, 2.2);
        run_cfg.t_window_us = 1.25 * run_cfg.t_corr_us;
        run_cfg.t_ss_us = 0.4;
        run_cfg.steadiness_check = false;
        match coherence_pipeline(
            &p,
            &run_cfg,
            &ctx.cfg.filter.spec(),
            scale,
            gamma_phi_scaled,
            tc.power_dbm,
            ctx.cfg.system.drive_offset_db,
            ctx.seed.wrapping_add(i as u64),
        ) {
            Ok((outcome, _)) => {
                rows.push(vec![
                    fmt_f64(scale),
                    fmt_f64(hz_from_rad_per_us(lambda_run)),
                    fmt_f64(outcome.t_coh_scaled_us),
                    fmt_f64(outcome.r2),
                    fmt_f64(outcome.excluded_fraction),
                ]);
                points.push((lambda_run, outcome.t_coh_scaled_us));
                curve.push((lambda_run, outcome.t_coh_scaled_us));
            }
            Err(e) => bundle.record_error(format!("scale {scale}"), e.to_string()),
        }
    }
    bundle.write_csv(
        "tcoh_sweep.csv",
        "lambda_scale,lambda_hz,t_coh_us,fit_r2,excluded_fraction",
        &rows,
    )?;

    if tc.fit_law && points.len() >= 4 {
        match fit_tcoh_law(&points, gamma_phi_scaled) {
            Ok(fit) => {
                #[derive(Serialize)]
                struct LawFit {
                    a: f64,
                    b: f64,
                    r2: f64,
                    gamma_phi_scaled: f64,
                    quantum_limit_tcoh_us: f64,
                }
                bundle.write_json(
                    "tcoh_law.json",
                    &LawFit {
                        a: fit.a,
                        b: fit.b,
                        r2: fit.r2,
                        gamma_phi_scaled,
                        quantum_limit_tcoh_us: fit.a / (fit.b * p.lambda),
                    },
                )?;
            }
            Err(e) => bundle.record_error("tcoh law fit", e.to_string()),
        }
    }

    if ctx.plot && !curve.is_empty() {
        let svg = svg::lines(
            "coherence time vs nonlinearity",
            "lambda (rad/us)",
            "T_coh (us)",
            &[("sweep", curve.as_slice())],
        );
        bundle.write_raw("tcoh_sweep.svg", svg.as_bytes())?;
    }
    Ok(())
}
