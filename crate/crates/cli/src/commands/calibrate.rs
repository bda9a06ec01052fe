//! Calibration commands: the effective-Kerr fit and the ringdown dephasing
//! extraction.

use anyhow::Result;
use serde::Serialize;

use kerrcomb::calibration::{
    extract_dephasing, fit_bare_kerr, lambda_b, polariton_modes, ringdown_simulate, PumpSpec,
};
use kerrcomb::units::{hz_from_rad_per_us, rad_per_us_from_hz};

use super::Ctx;
use crate::output::{fmt_f64, Bundle};
use crate::svg;

/// `kerr-fit`: Λ_b(Δ_ab) curve from the pump-probe model, optional noise
/// injection, and the one-parameter bare-Λ fit.
pub fn kerr_fit(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let base = ctx.cfg.system.params()?;
    let kc = &ctx.cfg.kerr;
    let pump = PumpSpec {
        power_watts: kc.pump_power_watts,
        detuning_linewidths: kc.pump_detuning_linewidths,
    };

    // Deterministic multiplicative noise from a tiny splitmix stream, so the
    // synthetic "measured" points are reproducible.
    let mut noise_state = kc.noise_seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
    let mut next_noise = move || -> f64 {
        noise_state ^= noise_state << 13;
        noise_state ^= noise_state >> 7;
        noise_state ^= noise_state << 17;
        (noise_state as f64 / u64::MAX as f64) * 2.0 - 1.0
    };

    let mut rows = Vec::new();
    let mut data = Vec::new();
    let mut curve = Vec::new();
    for &m in &kc.delta_ab_over_g {
        let mut p = base;
        p.omega_b = p.omega_a - m * p.g;
        match lambda_b(&p, &pump) {
            Ok(point) => {
                let measured = point.lambda_b * (1.0 + kc.noise_rel * next_noise());
                rows.push(vec![
                    fmt_f64(hz_from_rad_per_us(point.delta_ab)),
                    fmt_f64(hz_from_rad_per_us(point.lambda_b)),
                    fmt_f64(hz_from_rad_per_us(measured)),
                    fmt_f64(point.occupation),
                    fmt_f64(hz_from_rad_per_us(point.kappa_b)),
                ]);
                data.push((point.delta_ab, measured));
                curve.push((point.delta_ab / base.g, hz_from_rad_per_us(point.lambda_b) / 1e3));
            }
            Err(e) => bundle.record_error(format!("lambda_b at {m} g"), e.to_string()),
        }
    }
    bundle.write_csv(
        "lambda_b.csv",
        "delta_ab_hz,lambda_b_model_hz,lambda_b_measured_hz,occupation,kappa_b_hz",
        &rows,
    )?;

    match fit_bare_kerr(&data, &base, &pump) {
        Ok(fit) => {
            #[derive(Serialize)]
            struct KerrFitReport {
                lambda_hz: f64,
                two_sigma_hz: f64,
                rss: f64,
                n_points: usize,
            }
            bundle.write_json(
                "kerr_fit.json",
                &KerrFitReport {
                    lambda_hz: hz_from_rad_per_us(fit.lambda),
                    two_sigma_hz: hz_from_rad_per_us(fit.two_sigma),
                    rss: fit.rss,
                    n_points: data.len(),
                },
            )?;
        }
        Err(e) => bundle.record_error("bare kerr fit", e.to_string()),
    }

    if ctx.plot && !curve.is_empty() {
        let svg = svg::lines(
            "effective Kerr constant vs detuning",
            "delta_ab / g",
            "lambda_b / 2pi (kHz)",
            &[("model", curve.as_slice())],
        );
        bundle.write_raw("lambda_b.svg", svg.as_bytes())?;
    }
    Ok(())
}

/// `ringdown`: moment traces through the drive/ringdown schedule and the
/// extracted dephasing rate.
pub fn ringdown_cmd(ctx: &Ctx, bundle: &mut Bundle) -> Result<()> {
    let rc = &ctx.cfg.ringdown;
    let mut p = ctx.cfg.system.params()?;
    p.gamma_phi = rad_per_us_from_hz(rc.gamma_phi_hz);
    p.omega_b = p.omega_a - rc.delta_ab_over_g * p.g;
    let basis = polariton_modes(&p);
    p.omega_d = basis.nu_a;
    p.eta = rc.eta;

    let traces = ringdown_simulate(&p, rc.drive_us, rc.ring_us, rc.sample_dt_us)
        .map_err(|e| anyhow::anyhow!(e.to_string()))?;

    let rows: Vec<Vec<String>> = traces
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let v = &traces.moments[k];
            vec![
                fmt_f64(t),
                fmt_f64(traces.i_a[k]),
                fmt_f64(traces.a_n[k]),
                fmt_f64(v[0].norm()),
                fmt_f64(v[2].norm()),
                fmt_f64(v[5].re),
            ]
        })
        .collect();
    bundle.write_csv("ringdown.csv", "t_us,i_a,n_a,abs_a,abs_b,n_b", &rows)?;

    match extract_dephasing(&traces) {
        Ok(fit) => {
            #[derive(Serialize)]
            struct DephasingReport {
                lambda1: f64,
                lambda2: f64,
                gamma_phi_a: f64,
                gamma_phi_a_hz: f64,
                r2_amplitude: f64,
                r2_occupation: f64,
            }
            bundle.write_json(
                "dephasing.json",
                &DephasingReport {
                    lambda1: fit.lambda1,
                    lambda2: fit.lambda2,
                    gamma_phi_a: fit.gamma_phi_a,
                    gamma_phi_a_hz: hz_from_rad_per_us(fit.gamma_phi_a),
                    r2_amplitude: fit.r2_amplitude,
                    r2_occupation: fit.r2_occupation,
                },
            )?;
        }
        Err(e) => bundle.record_error("dephasing extraction", e.to_string()),
    }

    if ctx.plot {
        let amp: Vec<(f64, f64)> =
            traces.times.iter().zip(traces.i_a.iter()).map(|(&t, &v)| (t, v)).collect();
        let occ: Vec<(f64, f64)> =
            traces.times.iter().zip(traces.a_n.iter()).map(|(&t, &v)| (t, v)).collect();
        let svg = svg::lines(
            "cavity ringdown",
            "t (us)",
            "I_a / n_a",
            &[("I_a", amp.as_slice()), ("n_a", occ.as_slice())],
        );
        bundle.write_raw("ringdown.svg", svg.as_bytes())?;
    }
    Ok(())
}
