// Scratch exploration binary used during development; not part of the build.
use kerrcomb::dynamics::{find_limit_cycle, integrate_classical};
use kerrcomb::lyapunov::{default_delta_tau, max_lyapunov, LyapunovOpts};
use kerrcomb::params::PhaseState;
use kerrcomb::spectrum::comb_spectrum;
use kerrcomb::steady::linspace;
use kerrcomb::units::rad_per_us_from_hz;
use kerrcomb::Device;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "comb".into());
    let base = Device::A
        .params()
        .with_delta_da(rad_per_us_from_hz(-47.8e6))
        .with_delta_db(rad_per_us_from_hz(25.2e6));

    if mode == "debugspec" {
        let p = base.with_eta(base.eta_from_power_dbm(-73.0, 0.0));
        let traj = integrate_classical(&p, &PhaseState::origin(), 8.0, 1e-10, 2.0e-4).unwrap();
        let spec = kerrcomb::spectrum::power_spectrum(&traj, 4.0, p.omega_d).unwrap();
        let mut sorted = spec.power_db.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        println!("max 0 dB; median {:.1}; p90 {:.1}; p99 {:.1}; p99.9 {:.1}", sorted[n/2], sorted[(n as f64*0.9) as usize], sorted[(n as f64*0.99) as usize], sorted[(n as f64*0.999) as usize]);
        let mut peaks: Vec<(f64,f64)> = spec.peak_indices.iter().map(|&i| (spec.freq_hz[i]/1e6, spec.power_db[i])).collect();
        peaks.sort_by(|a,b| b.1.total_cmp(&a.1));
        for (f, db) in peaks.iter().take(30) { println!("  {f:14.4} MHz  {db:8.2} dB"); }
        println!("  ... {} peaks total", peaks.len());
    }

    if mode == "comb" {
        println!("comb spacing along the power cut at (-47.8, +25.2) MHz:");
        for dbm in linspace(-75.4, -70.4, 11) {
            let p = base.with_eta(base.eta_from_power_dbm(dbm, 0.0));
            let traj =
                integrate_classical(&p, &PhaseState::origin(), 8.0, 1e-10, 2.0e-4).unwrap();
            match comb_spectrum(&traj, 4.0, p.omega_d) {
                Ok(spec) => {
                    println!(
                        "{dbm:7.2} dBm: spacing {:?} MHz, {} peaks, conf {:.2}, resid {:.2} bins",
                        spec.spacing_hz.map(|s| s / 1e6),
                        spec.peak_indices.len(),
                        spec.confidence,
                        spec.equidistance_residual_bins
                    );
                }
                Err(e) => println!("{dbm:7.2} dBm: {e}"),
            }
        }
    }

    if mode == "lc" {
        for dbm in [-74.0, -73.0, -72.0] {
            let p = base.with_eta(base.eta_from_power_dbm(dbm, 0.0));
            match find_limit_cycle(&p, 4.0, 1e-8) {
                Ok(lc) => println!(
                    "{dbm} dBm: period {:.6} µs (spacing {:.3} MHz), closure {:.2e}",
                    lc.period,
                    1.0 / lc.period,
                    lc.closure
                ),
                Err(e) => println!("{dbm} dBm: FAILED {e}"),
            }
        }
    }


    if mode == "floq" {
        for dbm in [-75.35, -75.3, -75.25, -75.2, -75.1, -75.0] {
            let mut p = base.with_eta(base.eta_from_power_dbm(dbm, 0.0));
            p.gamma_phi = 0.0;
            match find_limit_cycle(&p, 4.0, 1e-9) {
                Ok(lc) => {
                    let fm = kerrcomb::floquet::fundamental_matrix(&lc, &p, 256).unwrap();
                    let fs = kerrcomb::floquet::floquet_eigensystem(&fm, &p).unwrap();
                    let pd = kerrcomb::floquet::phase_diffusion(&fs, &p);
                    println!("{dbm} dBm: T={:.6} mu0*T={:.2e} nz={} biorth={:.2e} angle={:.2e}",
                        lc.period,
                        fs.exponents[0].norm() * fs.period,
                        fs.near_zero_exponents(1e-5),
                        fs.biorthonormality_residual,
                        fs.p0_velocity_angle);
                    println!("      mults: {:?}", fs.multipliers.map(|m| format!("{:.4}", m.norm())));
                    println!("      r_eff={:.3} dn={:.4} Tcoh={:.2} us imag_frac={:.3}",
                        pd.r_eff, pd.delta_n, pd.t_coh, pd.imag_fraction);
                }
                Err(e) => println!("{dbm} dBm: {e}"),
            }
        }
    }


    if mode == "sdecoh" {
        use kerrcomb::coherence::{apply_filter, g1_and_coherence, output_correlation, steady_correlations, FilterSpec};
        use kerrcomb::model::scale_transform;
        use kerrcomb::sde::{simulate_ensemble, EnsembleSpec};
        let dbm: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(-75.0);
        let n_traj: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(1024);
        let mut p = base.with_eta(base.eta_from_power_dbm(dbm, 0.0));
        p.gamma_phi = 0.0;
        // Scale the nonlinearity up 100x (k = 0.01) for a desk-scale run.
        let (ps, _z) = scale_transform(&p, &kerrcomb::params::PhaseState::origin(), 0.01).unwrap();
        let mut spec = EnsembleSpec::new(&ps, n_traj, 20260809);
        spec.t_ss = 0.40;
        spec.t_window = 0.75;
        spec.t_corr = 0.58;
        spec.steadiness_check = false;
        println!("dt={:.2e} sample_dt={:.4} t_end={:.2}", spec.dt, spec.sample_dt(), spec.t_end());
        let t0 = std::time::Instant::now();
        let result = simulate_ensemble(&ps, &spec).unwrap();
        println!("simulated {} traj in {:.1?}; spiked {}", n_traj, t0.elapsed(), result.n_spiked);
        let corr = steady_correlations(&result).unwrap();
        println!("corr: n_used={} steadiness={:?} |C(0)|={:.3}", corr.n_used, corr.steadiness_deviation, corr.c_adag_a[0].norm());
        let out = output_correlation(&corr, ps.kappa);
        let filt = apply_filter(&out, &FilterSpec::default()).unwrap();
        println!("f_sideband detected: {:.2} MHz", filt.f_sideband_hz / 1e6);
        match g1_and_coherence(&filt) {
            Ok(g1) => println!("T_coh(scaled) = {:.4} us -> x100 = {:.1} us  (model {:?}, r2 {:.4}, peaks {})",
                g1.t_coh, 100.0 * g1.t_coh, g1.model, g1.r2, g1.n_peaks),
            Err(e) => println!("g1 failed: {e}"),
        }
    }


    if mode == "spikediag" {
        use kerrcomb::model::scale_transform;
        use kerrcomb::sde::{simulate_with_initial, EnsembleSpec};
        let mut p = base.with_eta(base.eta_from_power_dbm(-75.0, 0.0));
        p.gamma_phi = 0.0;
        for k in [1.0, 0.1, 0.01] {
            let (ps, _z) = scale_transform(&p, &kerrcomb::params::PhaseState::origin(), k).unwrap();
            let mut spec = EnsembleSpec::new(&ps, 64, 1);
            spec.t_ss = 1.0; spec.t_window = 1.8; spec.t_corr = 1.4;
            let r = simulate_with_initial(&ps, &spec, kerrcomb::params::PhaseState::origin()).unwrap();
            let maxa = r.windows.iter().filter(|w| !w.spiked).flat_map(|w| w.alpha.iter()).map(|z| z.norm()).fold(0.0f64, f64::max);
            println!("k={k}: Lambda'={:.3} thr={:.1} spiked={}/64 max|alpha|={:.1}", ps.lambda, r.divergence_threshold, r.n_spiked, maxa);
        }
    }


    if mode == "escape" {
        use kerrcomb::model::scale_transform;
        use kerrcomb::sde::{simulate_with_initial, EnsembleSpec};
        let mut p = base.with_eta(base.eta_from_power_dbm(-75.0, 0.0));
        p.gamma_phi = 0.0;
        for k in [0.01f64, 0.02, 0.05] {
            let (ps, _z) = scale_transform(&p, &kerrcomb::params::PhaseState::origin(), k).unwrap();
            let mut spec = EnsembleSpec::new(&ps, 128, 5);
            spec.t_ss = 0.0; spec.t_window = 4.0; spec.t_corr = 1.0;
            spec.steadiness_check = false;
            spec.sample_every = 100;
            let r = simulate_with_initial(&ps, &spec, kerrcomb::params::PhaseState::origin()).unwrap();
            // Escape time proxy: number of retained samples before spike.
            let mut times: Vec<f64> = r.windows.iter().map(|w| w.alpha.len() as f64 * r.sample_dt).collect();
            times.sort_by(f64::total_cmp);
            println!("k={k}: spiked {}/128; escape times: p10={:.2} p50={:.2} p90={:.2} (max window {:.2})",
                r.n_spiked, times[12], times[64], times[115], spec.t_window);
        }
    }


    if mode == "dtsens" {
        use kerrcomb::model::scale_transform;
        use kerrcomb::sde::{simulate_with_initial, EnsembleSpec};
        let mut p = base.with_eta(base.eta_from_power_dbm(-74.0, 0.0));
        p.gamma_phi = 0.0;
        let (ps, _z) = scale_transform(&p, &kerrcomb::params::PhaseState::origin(), 0.01).unwrap();
        for div in [1.0, 2.0, 4.0] {
            let mut spec = EnsembleSpec::new(&ps, 256, 5);
            spec.dt /= div;
            spec.sample_every = (0.002 / spec.dt).round() as usize;
            spec.t_ss = 0.40; spec.t_window = 0.75; spec.t_corr = 0.58;
            spec.steadiness_check = false;
            let r = simulate_with_initial(&ps, &spec, kerrcomb::params::PhaseState::origin()).unwrap();
            println!("dt={:.2e}: spiked {}/256", spec.dt, r.n_spiked);
        }
    }

    if mode == "lyap" {
        // Coarse map over power x delta_db at the -47.8 MHz cut.
        println!("lambda_M map (rows = power dBm, cols = delta_db -90..30 MHz):");
        let db_list = linspace(-90.0, 30.0, 25);
        for dbm in linspace(-76.0, -64.0, 7) {
            let mut row = String::new();
            for &db in &db_list {
                let p = base
                    .with_delta_db(rad_per_us_from_hz(db * 1e6))
                    .with_eta(base.eta_from_power_dbm(dbm, 0.0));
                let opts = LyapunovOpts { transient: 3.0, tol: 1e-9, epsilon_lambda: 0.0 };
                let res = max_lyapunov(&p, &PhaseState::origin(), default_delta_tau(&p), 300, &opts);
                row.push(match res {
                    Ok(r) => match r.class {
                        kerrcomb::lyapunov::DynamicsClass::StableFp => '.',
                        kerrcomb::lyapunov::DynamicsClass::LimitCycle => 'o',
                        kerrcomb::lyapunov::DynamicsClass::Chaos => 'X',
                    },
                    Err(kerrcomb::Error::NonConverged { overall, .. }) => {
                        if overall > 0.1 { 'x' } else if overall < -0.1 { ',' } else { '?' }
                    }
                    Err(_) => 'E',
                });
            }
            println!("{dbm:7.1} {row}");
        }
    }
}

#[allow(dead_code)]
fn noop() {}
