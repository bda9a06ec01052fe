//! Measurement models: polariton diagonalization, the hybridization-diluted
//! effective Kerr constant, pump photon-number calibration, the optical-Kerr
//! reference point, and the weak-driving ringdown system for dephasing
//! extraction.

use nalgebra::{Matrix2, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::ode::{self, OdeOpts};
use crate::params::SystemParams;
use crate::steady::steady_states;
use crate::units;
use crate::C64;

/// Polariton modes of the coupled linear two-mode Hamiltonian.
#[derive(Debug, Clone)]
pub struct PolaritonBasis {
    /// a-like polariton frequency (rad/µs).
    pub nu_a: f64,
    /// b-like polariton frequency (rad/µs).
    pub nu_b: f64,
    /// Orthogonal eigenvector matrix: column 1 a-like, column 2 b-like;
    /// (c_a, c_b)ᵀ = Pᵀ (a, b)ᵀ.
    pub p: Matrix2<f64>,
}

impl PolaritonBasis {
    /// Inverse (= transpose) of the eigenvector matrix.
    pub fn p_inv(&self) -> Matrix2<f64> {
        self.p.transpose()
    }

    /// Polariton amplitudes from bare-mode amplitudes.
    pub fn to_polariton(&self, alpha: C64, beta: C64) -> (C64, C64) {
        let pi = self.p_inv();
        (
            pi[(0, 0)] * alpha + pi[(0, 1)] * beta,
            pi[(1, 0)] * alpha + pi[(1, 1)] * beta,
        )
    }

    /// Linewidth of the b-like polariton from the bare-mode rates.
    pub fn kappa_b(&self, p: &SystemParams) -> f64 {
        let w_a = self.p[(0, 1)] * self.p[(0, 1)];
        let w_b = self.p[(1, 1)] * self.p[(1, 1)];
        w_a * p.kappa + w_b * p.gamma_b_total()
    }
}

/// Diagonalizes the lab-frame linear Hamiltonian matrix [[ω_a, g],[g, ω_b]].
pub fn polariton_modes(p: &SystemParams) -> PolaritonBasis {
    let mean = 0.5 * (p.omega_a + p.omega_b);
    let half_delta = 0.5 * p.delta_ab();
    let root = (half_delta * half_delta + p.g * p.g).sqrt();
    let nu_plus = mean + root;
    let nu_minus = mean - root;

    // Eigenvector for eigenvalue ν: (g, ν − ω_a), normalized. The a-like
    // column is the one dominated by its first component.
    let vec_for = |nu: f64| -> nalgebra::Vector2<f64> {
        let v = if p.g.abs() > 0.0 {
            nalgebra::Vector2::new(p.g, nu - p.omega_a)
        } else if (nu - p.omega_a).abs() < (nu - p.omega_b).abs() {
            nalgebra::Vector2::new(1.0, 0.0)
        } else {
            nalgebra::Vector2::new(0.0, 1.0)
        };
        v / v.norm()
    };
    let v_plus = vec_for(nu_plus);
    let v_minus = vec_for(nu_minus);

    let (mut a_col, mut b_col, nu_a, nu_b) = if v_plus[0].abs() >= v_minus[0].abs() {
        (v_plus, v_minus, nu_plus, nu_minus)
    } else {
        (v_minus, v_plus, nu_minus, nu_plus)
    };
    // Sign convention: dominant (diagonal) components positive.
    if a_col[0] < 0.0 {
        a_col = -a_col;
    }
    if b_col[1] < 0.0 {
        b_col = -b_col;
    }
    PolaritonBasis { nu_a, nu_b, p: Matrix2::from_columns(&[a_col, b_col]) }
}

/// Effective Kerr constant of the b-like polariton from steady polariton
/// amplitudes: the bare Λ diluted by hybridization weights plus the
/// cross-Kerr contribution of the residually occupied a-like mode.
pub fn lambda_b_from_amplitudes(
    basis: &PolaritonBasis,
    lambda: f64,
    c_a: C64,
    c_b: C64,
) -> Result<f64> {
    let occ_b = c_b.norm_sqr();
    if occ_b < 1e-12 * (1.0 + c_a.norm_sqr()) {
        return Err(Error::ZeroOccupation { occupation: occ_b });
    }
    let p21 = basis.p[(1, 0)];
    let p22 = basis.p[(1, 1)];
    let a_2222 = p22 * p22 * p22 * p22;
    let a_2121 = (p21 * p22) * (p21 * p22);
    let a_2221 = p22 * p22 * p22 * p21;
    let a_2122 = a_2221;
    let ratio = c_a / c_b;
    let value = a_2222
        + 2.0 * a_2121 * ratio.norm_sqr()
        + (2.0 * a_2221 * ratio + a_2122 * ratio.conj()).re;
    Ok(lambda * value)
}

/// Pump-probe conditions: a strong tone detuned five linewidths above the
/// b-like polariton.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PumpSpec {
    /// Pump power at the device (W).
    pub power_watts: f64,
    /// Pump detuning from the b-like polariton in units of its linewidth.
    pub detuning_linewidths: f64,
}

impl Default for PumpSpec {
    fn default() -> Self {
        Self { power_watts: 1e-15, detuning_linewidths: 5.0 }
    }
}

/// Result of one simulated pump-probe Kerr measurement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaBPoint {
    pub delta_ab: f64,
    pub lambda_b: f64,
    /// Polariton occupation n̄_b at the pump conditions.
    pub occupation: f64,
    pub nu_b: f64,
    pub kappa_b: f64,
}

/// Measured (hybridization-diluted) Kerr constant at the given pump.
///
/// The steady state is solved at the pump frequency; when several fixed
/// points exist the stable one on the low-occupation branch is used, as a
/// pump-probe measurement tracks the adiabatically connected branch.
pub fn lambda_b(p: &SystemParams, pump: &PumpSpec) -> Result<LambdaBPoint> {
    let basis = polariton_modes(p);
    let kappa_b = basis.kappa_b(p);
    let omega_pump = basis.nu_b + pump.detuning_linewidths * kappa_b;
    let mut driven = *p;
    driven.omega_d = omega_pump;
    driven.eta = (p.kappa * units::photon_flux_per_us(pump.power_watts, omega_pump)).sqrt();

    let sol = steady_states(&driven)?;
    let fp = sol
        .fixed_points
        .iter()
        .filter(|f| f.stable)
        .min_by(|a, b| a.n_b.total_cmp(&b.n_b))
        .or_else(|| sol.fixed_points.first())
        .ok_or_else(|| Error::InvalidParam("no steady state at pump conditions".into()))?;

    let (c_a, c_b) = basis.to_polariton(fp.alpha, fp.beta);
    let lb = lambda_b_from_amplitudes(&basis, p.lambda, c_a, c_b)?;
    Ok(LambdaBPoint {
        delta_ab: p.delta_ab(),
        lambda_b: lb,
        occupation: c_b.norm_sqr(),
        nu_b: basis.nu_b,
        kappa_b,
    })
}

/// One-parameter fit of the bare Kerr constant through the Λ_b(Δ_ab) model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BareKerrFit {
    /// Fitted bare nonlinearity (rad/µs).
    pub lambda: f64,
    /// 2σ confidence half-width (rad/µs).
    pub two_sigma: f64,
    pub rss: f64,
}

/// Fits Λ to measured (Δ_ab, Λ_b) points with everything else held at the
/// template parameters.
pub fn fit_bare_kerr(
    data: &[(f64, f64)],
    template: &SystemParams,
    pump: &PumpSpec,
) -> Result<BareKerrFit> {
    if data.len() < 3 {
        return Err(Error::InvalidParam("need at least 3 (delta_ab, lambda_b) points".into()));
    }
    let model = |lambda: f64, delta_ab: f64| -> Result<f64> {
        let mut p = *template;
        p.lambda = lambda;
        p.omega_b = p.omega_a - delta_ab;
        Ok(lambda_b(&p, pump)?.lambda_b)
    };

    // Λ_b is nearly proportional to Λ at fixed detuning, so a secant-style
    // Gauss–Newton converges in a few steps from any positive seed.
    let mut lambda = data.iter().map(|d| d.1.abs()).fold(0.0f64, f64::max).max(1e-6);
    for _ in 0..30 {
        let h = 1e-6 * lambda;
        let mut jtj = 0.0;
        let mut jtr = 0.0;
        for &(dab, y) in data {
            let f0 = model(lambda, dab)?;
            let f1 = model(lambda + h, dab)?;
            let grad = (f1 - f0) / h;
            let r = f0 - y;
            jtj += grad * grad;
            jtr += grad * r;
        }
        if jtj < 1e-300 {
            return Err(Error::IllConditioned(
                "model insensitive to the bare Kerr constant".into(),
            ));
        }
        let step = jtr / jtj;
        lambda -= step;
        if !(lambda > 0.0) {
            return Err(Error::IllConditioned("fit left the physical domain".into()));
        }
        if step.abs() < 1e-12 * lambda {
            break;
        }
    }
    // Recompute the curvature at the optimum for the confidence interval.
    let h = 1e-6 * lambda;
    let mut jtj = 0.0;
    let mut rss = 0.0;
    for &(dab, y) in data {
        let f0 = model(lambda, dab)?;
        let f1 = model(lambda + h, dab)?;
        let grad = (f1 - f0) / h;
        let r = f0 - y;
        jtj += grad * grad;
        rss += r * r;
    }
    let dof = (data.len() as f64 - 1.0).max(1.0);
    let sigma2 = rss / dof / jtj;
    Ok(BareKerrFit { lambda, two_sigma: 2.0 * sigma2.sqrt(), rss })
}

/// Polariton occupation from applied pump power:
/// n̄_b = κ_b/(Δ_P² + (κ_b/2)²) · P/(ħω_P).
///
/// `omega_p`, `kappa_b`, `delta_p` in internal rad/µs; `p_watts` in watts.
pub fn photon_number(p_watts: f64, omega_p: f64, kappa_b: f64, delta_p: f64) -> f64 {
    let flux = units::photon_flux_per_us(p_watts, omega_p);
    kappa_b / (delta_p * delta_p + 0.25 * kappa_b * kappa_b) * flux
}

/// Kerr shift per photon of an optical microresonator,
/// Λ_op = ħω²c·n₂/(n²V₀), in rad/s (SI inputs).
pub fn optical_kerr_reference(omega_op_rad_s: f64, n: f64, n2_m2_per_w: f64, v0_m3: f64) -> f64 {
    units::HBAR * omega_op_rad_s * omega_op_rad_s * units::SPEED_OF_LIGHT * n2_m2_per_w
        / (n * n * v0_m3)
}

/// Closed linear system for the first and second moments in the weak-driving
/// (Λ-neglected) regime: d/dt v = M v + d with
/// v = (⟨a⟩, ⟨a†⟩, ⟨b⟩, ⟨b†⟩, ⟨a†a⟩, ⟨b†b⟩, ⟨a†b⟩, ⟨b†a⟩).
#[derive(Debug, Clone)]
pub struct RingdownSystem {
    pub m: SMatrix<C64, 8, 8>,
    pub d: SVector<C64, 8>,
}

impl RingdownSystem {
    pub fn build(p: &SystemParams) -> Self {
        let i = C64::i();
        let dda = p.delta_da();
        let ddb = p.delta_db();
        let hk = 0.5 * p.kappa;
        let hgb = 0.5 * p.gamma_b_total();
        let g = p.g;
        let eta = p.eta;

        let mut m = SMatrix::<C64, 8, 8>::zeros();
        // First moments.
        m[(0, 0)] = i * dda - hk;
        m[(0, 2)] = -i * g;
        m[(1, 1)] = -i * dda - hk;
        m[(1, 3)] = i * g;
        m[(2, 2)] = i * ddb - hgb;
        m[(2, 0)] = -i * g;
        m[(3, 3)] = -i * ddb - hgb;
        m[(3, 1)] = i * g;
        // ⟨a†a⟩.
        m[(4, 4)] = C64::from(-p.kappa);
        m[(4, 6)] = -i * g;
        m[(4, 7)] = i * g;
        m[(4, 0)] = i * eta;
        m[(4, 1)] = -i * eta;
        // ⟨b†b⟩.
        m[(5, 5)] = C64::from(-p.gamma);
        m[(5, 6)] = i * g;
        m[(5, 7)] = -i * g;
        // ⟨a†b⟩.
        m[(6, 6)] = i * (ddb - dda) - 0.5 * (p.kappa + p.gamma_b_total());
        m[(6, 4)] = -i * g;
        m[(6, 5)] = i * g;
        m[(6, 2)] = i * eta;
        // ⟨b†a⟩.
        m[(7, 7)] = i * (dda - ddb) - 0.5 * (p.kappa + p.gamma_b_total());
        m[(7, 4)] = i * g;
        m[(7, 5)] = -i * g;
        m[(7, 3)] = -i * eta;

        let mut d = SVector::<C64, 8>::zeros();
        d[0] = -i * eta;
        d[1] = i * eta;
        Self { m, d }
    }

    /// First-moment block M1 as a 4×4 (drive excluded).
    pub fn m1(&self) -> nalgebra::Matrix4<C64> {
        nalgebra::Matrix4::from_fn(|r, c| self.m[(r, c)])
    }

    /// Second-moment block M2 as a 4×4.
    pub fn m2(&self) -> nalgebra::Matrix4<C64> {
        nalgebra::Matrix4::from_fn(|r, c| self.m[(r + 4, c + 4)])
    }

    /// Affine propagation over `t` by one augmented matrix exponential.
    pub fn propagate(&self, v0: &SVector<C64, 8>, t: f64) -> SVector<C64, 8> {
        let mut aug = nalgebra::DMatrix::<C64>::zeros(9, 9);
        for r in 0..8 {
            for c in 0..8 {
                aug[(r, c)] = self.m[(r, c)] * t;
            }
            aug[(r, 8)] = self.d[r] * t;
        }
        let e = expm(&aug);
        SVector::from_fn(|r, _| {
            (0..8).map(|c| e[(r, c)] * v0[c]).sum::<C64>() + e[(r, 8)]
        })
    }
}

/// Time traces of the moment vector through a drive-then-ringdown schedule.
#[derive(Debug, Clone)]
pub struct RingdownTraces {
    /// Sample times; 0 is the moment the drive switches off.
    pub times: Vec<f64>,
    pub moments: Vec<SVector<C64, 8>>,
    /// ⟨I_a⟩(t) = √2·Re⟨a⟩.
    pub i_a: Vec<f64>,
    /// ⟨a†a⟩(t).
    pub a_n: Vec<f64>,
    /// Index of the first ringdown sample (t >= 0).
    pub ringdown_start: usize,
}

/// Integrates the 8-dimensional moment system through the schedule: the
/// drive is on for `drive_time`, then off for `ring_time`.
pub fn ringdown_simulate(
    p: &SystemParams,
    drive_time: f64,
    ring_time: f64,
    sample_dt: f64,
) -> Result<RingdownTraces> {
    if drive_time <= 0.0 || ring_time <= 0.0 || sample_dt <= 0.0 {
        return Err(Error::InvalidParam("times must be positive".into()));
    }
    let driven = RingdownSystem::build(p);
    let silent = RingdownSystem::build(&p.with_eta(0.0));

    let opts = OdeOpts { rtol: 1e-11, atol: 1e-13, divergence_norm: None, ..OdeOpts::default() };
    let mut times = Vec::new();
    let mut moments = Vec::new();

    let f_on = |_t: f64, v: &SVector<C64, 8>| driven.m * v + driven.d;
    let (v_off, _) = ode::integrate_sampled(
        &f_on,
        -drive_time,
        SVector::zeros(),
        0.0,
        sample_dt,
        &opts,
        |_, t, v| {
            times.push(t);
            moments.push(*v);
        },
    )?;
    let ringdown_start = times.len();
    let f_off = |_t: f64, v: &SVector<C64, 8>| silent.m * v;
    ode::integrate_sampled(&f_off, 0.0, v_off, ring_time, sample_dt, &opts, |_, t, v| {
        times.push(t);
        moments.push(*v);
    })?;

    let i_a = moments.iter().map(|v| std::f64::consts::SQRT_2 * v[0].re).collect();
    let a_n = moments.iter().map(|v| v[4].re).collect();
    Ok(RingdownTraces { times, moments, i_a, a_n, ringdown_start })
}

/// Exponential rates fitted to the ringdown portion of the traces.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DephasingFit {
    /// Decay rate of ⟨I_a⟩ (via the |⟨a⟩| envelope).
    pub lambda1: f64,
    /// Decay rate of ⟨a†a⟩.
    pub lambda2: f64,
    /// Dephasing inherited by the linear mode, γ_φ^a = λ₁ − λ₂/2.
    pub gamma_phi_a: f64,
    pub r2_amplitude: f64,
    pub r2_occupation: f64,
}

/// Extracts γ_φ^a = λ₁ − λ₂/2 from ringdown traces.
///
/// Both fits run on the log of the envelope: the amplitude trace uses
/// |⟨a⟩| (carrier removed), and hybridization beating is handled by fitting
/// through the beat maxima when present.
pub fn extract_dephasing(traces: &RingdownTraces) -> Result<DephasingFit> {
    let start = traces.ringdown_start;
    if traces.times.len() - start < 8 {
        return Err(Error::InvalidParam("ringdown portion too short".into()));
    }
    let t: Vec<f64> = traces.times[start..].to_vec();
    let amp: Vec<f64> =
        traces.moments[start..].iter().map(|v| v[0].norm() * std::f64::consts::SQRT_2).collect();
    let occ: Vec<f64> = traces.a_n[start..].to_vec();

    let (lambda1, r2_1) = envelope_rate(&t, &amp)?;
    let (lambda2, r2_2) = envelope_rate(&t, &occ)?;
    if r2_1 < 0.9 || r2_2 < 0.9 {
        return Err(Error::FitPoor { r2: r2_1.min(r2_2) });
    }
    Ok(DephasingFit {
        lambda1,
        lambda2,
        gamma_phi_a: lambda1 - 0.5 * lambda2,
        r2_amplitude: r2_1,
        r2_occupation: r2_2,
    })
}

/// Log-linear decay rate of a positive envelope, via beat maxima when the
/// trace is non-monotone.
///
/// The fit stops once the envelope has fallen to a few percent of its start:
/// beyond that, slowly decaying hybridization remnants dominate the log
/// slope. A robust pass then drops outliers (beat ripple) and refits.
fn envelope_rate(t: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let y0 = y[0].abs().max(1e-300);
    let mut end = y.len();
    for (k, &v) in y.iter().enumerate() {
        if v.abs() < 3e-2 * y0 {
            end = k;
            break;
        }
    }
    if end < 6 {
        return Err(Error::FitPoor { r2: 0.0 });
    }
    let tw = &t[..end];
    let yw = &y[..end];

    let mut peaks: Vec<usize> = vec![0];
    for k in 1..end - 1 {
        if yw[k] >= yw[k - 1] && yw[k] > yw[k + 1] {
            peaks.push(k);
        }
    }
    let (mut ts, mut ys): (Vec<f64>, Vec<f64>) = if peaks.len() >= 5 {
        (
            peaks.iter().map(|&k| tw[k]).collect(),
            peaks.iter().map(|&k| yw[k].abs().max(1e-300).ln()).collect(),
        )
    } else {
        (tw.to_vec(), yw.iter().map(|v| v.abs().max(1e-300).ln()).collect())
    };

    let mut fit = line_fit(&ts, &ys)?;
    for _ in 0..2 {
        let rms = (ts
            .iter()
            .zip(ys.iter())
            .map(|(&x, &y)| (y - fit.0 - fit.1 * x).powi(2))
            .sum::<f64>()
            / ts.len() as f64)
            .sqrt();
        if rms < 1e-12 {
            break;
        }
        let keep: Vec<usize> = (0..ts.len())
            .filter(|&i| (ys[i] - fit.0 - fit.1 * ts[i]).abs() <= 2.0 * rms)
            .collect();
        if keep.len() < 6 || keep.len() == ts.len() {
            break;
        }
        ts = keep.iter().map(|&i| ts[i]).collect();
        ys = keep.iter().map(|&i| ys[i]).collect();
        fit = line_fit(&ts, &ys)?;
    }
    Ok((-fit.1, fit.2))
}

/// Ordinary least squares line fit: (intercept, slope, R²).
fn line_fit(ts: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    let n = ts.len() as f64;
    let sx: f64 = ts.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = ts.iter().map(|x| x * x).sum();
    let sxy: f64 = ts.iter().zip(ys.iter()).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::FitPoor { r2: 0.0 });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 =
        ts.iter().zip(ys.iter()).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((intercept, slope, r2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Device;
    use crate::units::rad_per_us_from_hz;
    use approx::assert_relative_eq;

    #[test]
    fn polariton_limits() {
        let mut p = Device::A.params();
        p.g = 0.0;
        let b = polariton_modes(&p);
        assert_relative_eq!(b.nu_a, p.omega_a, max_relative = 1e-14);
        assert_relative_eq!(b.nu_b, p.omega_b, max_relative = 1e-14);
        assert_relative_eq!((b.p - Matrix2::identity()).norm(), 0.0, epsilon = 1e-14);

        // Resonant avoided crossing splits by 2g.
        let mut p2 = Device::A.params();
        p2.omega_b = p2.omega_a;
        let b2 = polariton_modes(&p2);
        assert_relative_eq!((b2.nu_b - b2.nu_a).abs(), 2.0 * p2.g, max_relative = 1e-12);
    }

    #[test]
    fn polariton_matches_symmetric_eigensolver() {
        let base = Device::A.params();
        for k in -40..=40 {
            let dab = k as f64 * 0.1 * base.g;
            let mut p = base;
            p.omega_b = p.omega_a - dab;
            let basis = polariton_modes(&p);
            let h = Matrix2::new(p.omega_a, p.g, p.g, p.omega_b);
            let eig = nalgebra::SymmetricEigen::new(h);
            let mut expect = [eig.eigenvalues[0], eig.eigenvalues[1]];
            expect.sort_by(f64::total_cmp);
            let mut got = [basis.nu_a, basis.nu_b];
            got.sort_by(f64::total_cmp);
            for (e, g2) in expect.iter().zip(got.iter()) {
                assert_relative_eq!(e, g2, max_relative = 1e-12);
            }
            // Interlacing.
            let lo = p.omega_a.min(p.omega_b);
            let hi = p.omega_a.max(p.omega_b);
            assert!(got[0] <= lo + 1e-9 && got[1] >= hi - 1e-9);
            // Orthogonality.
            assert_relative_eq!(
                (basis.p * basis.p.transpose() - Matrix2::identity()).norm(),
                0.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn unhybridized_bracket_returns_bare_lambda() {
        let basis = PolaritonBasis { nu_a: 1.0, nu_b: 2.0, p: Matrix2::identity() };
        let lb =
            lambda_b_from_amplitudes(&basis, 0.7, C64::new(5.0, -3.0), C64::new(0.1, 0.2))
                .unwrap();
        assert_relative_eq!(lb, 0.7, max_relative = 1e-14);
    }

    #[test]
    fn zero_occupation_is_an_error() {
        let basis = PolaritonBasis { nu_a: 1.0, nu_b: 2.0, p: Matrix2::identity() };
        assert!(matches!(
            lambda_b_from_amplitudes(&basis, 0.7, C64::from(1.0), C64::ZERO),
            Err(Error::ZeroOccupation { .. })
        ));
    }

    #[test]
    fn lambda_b_dilutes_with_hybridization() {
        let base = Device::A.params();
        let pump = PumpSpec::default();
        let mut lambdas = Vec::new();
        for dab_over_g in [20.0, 8.0, 4.0, 2.0, 1.0] {
            let mut p = base;
            p.omega_b = p.omega_a - dab_over_g * p.g;
            let point = lambda_b(&p, &pump).unwrap();
            lambdas.push(point.lambda_b);
        }
        // Λ_b → Λ at large detuning (1% at 20g) and decreases monotonically
        // as hybridization grows.
        assert_relative_eq!(lambdas[0], base.lambda, max_relative = 0.01);
        for w in lambdas.windows(2) {
            assert!(w[1] < w[0], "expected dilution: {lambdas:?}");
        }
    }

    #[test]
    fn bare_kerr_fit_noiseless_exact() {
        let base = Device::A.params();
        let pump = PumpSpec::default();
        let data: Vec<(f64, f64)> = [12.0, 6.0, 3.0, 1.5]
            .iter()
            .map(|&m| {
                let mut p = base;
                p.omega_b = p.omega_a - m * p.g;
                (p.delta_ab(), lambda_b(&p, &pump).unwrap().lambda_b)
            })
            .collect();
        let fit = fit_bare_kerr(&data, &base, &pump).unwrap();
        assert_relative_eq!(fit.lambda, base.lambda, max_relative = 1e-10);
    }

    #[test]
    fn photon_number_limits() {
        assert_eq!(photon_number(0.0, 100.0, 2.0, 10.0), 0.0);
        // On resonance: n = 4P/(ħω κ_b).
        let p_w = 1e-15;
        let omega = rad_per_us_from_hz(4.9e9);
        let kb = 0.5;
        let on_res = photon_number(p_w, omega, kb, 0.0);
        let expect = 4.0 * units::photon_flux_per_us(p_w, omega) / kb;
        assert_relative_eq!(on_res, expect, max_relative = 1e-12);
        // Doubling a 5-linewidth detuning cuts the occupation ~4x.
        let n5 = photon_number(p_w, omega, kb, 5.0 * kb);
        let n10 = photon_number(p_w, omega, kb, 10.0 * kb);
        assert_relative_eq!(n5 / n10, 100.25 / 25.25, max_relative = 1e-12);
    }

    #[test]
    fn optical_reference_magnitudes() {
        // Silicon-nitride microresonator numbers.
        let omega = 2.0 * std::f64::consts::PI * 100.0e12;
        let lambda_m = 1.55e-6;
        let n = 2.0;
        let v0 = (lambda_m / n as f64).powi(3);
        let l_op = optical_kerr_reference(omega, n, 2.5e-19, v0);
        let l_op_hz = l_op / (2.0 * std::f64::consts::PI);
        assert!(
            (80.0..500.0).contains(&l_op_hz),
            "Λ_op/2π = {l_op_hz} Hz, expected ~100 Hz scale"
        );
        // Q = 1e7 resonator: Λ_op/κ_op ~ 1e-5.
        let kappa_op = omega / 1.0e7;
        let ratio = l_op / kappa_op;
        assert!((0.3e-5..5.0e-5).contains(&ratio), "ratio {ratio}");
        assert_eq!(optical_kerr_reference(omega, n, 0.0, v0), 0.0);
    }

    #[test]
    fn ringdown_block_structure() {
        let p = Device::A.params().with_eta(0.0);
        let sys = RingdownSystem::build(&p);
        // η = 0: no coupling from first to second moments and no drive.
        for r in 4..8 {
            for c in 0..4 {
                assert_eq!(sys.m[(r, c)], C64::ZERO);
            }
        }
        assert_eq!(sys.d.norm(), 0.0);

        let mut p2 = Device::A.params().with_eta(3.0);
        p2.g = 0.0;
        let sys2 = RingdownSystem::build(&p2);
        for r in 0..4 {
            for c in 0..4 {
                if r != c {
                    assert_eq!(sys2.m1()[(r, c)], C64::ZERO);
                    assert_eq!(sys2.m2()[(r, c)], C64::ZERO);
                }
            }
        }
    }

    #[test]
    fn uncoupled_ringdown_rates_exact() {
        // g = 0: ⟨a⟩ decays at κ/2, ⟨a†a⟩ at κ, ⟨b⟩ at (γ+γφ)/2, ⟨b†b⟩ at γ.
        let mut p = Device::A.params();
        p.g = 0.0;
        p.gamma = 0.9;
        p.gamma_phi = 0.4;
        p.kappa = 3.0;
        p.eta = 50.0;
        let traces = ringdown_simulate(&p, 4.0, 2.0, 0.002).unwrap();
        let s = traces.ringdown_start;
        let v0 = traces.moments[s];
        let last = traces.moments.len() - 1;
        let t = traces.times[last];
        let vt = traces.moments[last];
        // First moments also rotate at the detuning; compare moduli.
        let checks: [(usize, f64); 3] =
            [(0, 0.5 * p.kappa), (4, p.kappa), (5, p.gamma)];
        for (idx, rate) in checks {
            let expect = v0[idx].norm() * (-rate * t).exp();
            let err = (vt[idx].norm() - expect).abs() / v0[idx].norm().max(1e-12);
            assert!(err < 1e-8, "moment {idx}: err {err}");
        }
        // b-mode amplitude: seed it directly since the drive leaves it dark
        // when g = 0.
        let sys = RingdownSystem::build(&p.with_eta(0.0));
        let mut vb = SVector::<C64, 8>::zeros();
        vb[2] = C64::new(1.0, -0.5);
        vb[3] = vb[2].conj();
        let out = sys.propagate(&vb, 1.3);
        let expect = vb[2]
            * ((C64::i() * p.delta_db() - C64::from(0.5 * p.gamma_b_total())) * 1.3).exp();
        assert!((out[2] - expect).norm() < 1e-9);
    }

    #[test]
    fn eigen_decomposition_oracle_matches_integration() {
        // Hybridized, driven: closed-form affine propagation against the
        // adaptive integration of the same schedule.
        let mut p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-30.0e6))
            .with_delta_db(rad_per_us_from_hz(10.0e6));
        p.gamma = 0.2;
        p.gamma_phi = 0.35;
        p.eta = 120.0;
        let dt_samp = 0.001;
        let traces = ringdown_simulate(&p, 0.8, 0.6, dt_samp).unwrap();

        let driven = RingdownSystem::build(&p);
        let silent = RingdownSystem::build(&p.with_eta(0.0));
        // Drive-on segment from vacuum.
        let v_off = driven.propagate(&SVector::zeros(), 0.8);
        let idx0 = traces.ringdown_start;
        let scale = v_off.norm();
        assert!((traces.moments[idx0] - v_off).norm() < 1e-9 * scale);
        // A point inside the ringdown.
        let k = idx0 + 300;
        let t = traces.times[k];
        let expect = silent.propagate(&v_off, t);
        assert!(
            (traces.moments[k] - expect).norm() < 1e-9 * scale,
            "deviation {:.2e}",
            (traces.moments[k] - expect).norm() / scale
        );
        // Physicality: conjugate symmetry of the moment vector.
        for v in &traces.moments {
            assert!((v[1] - v[0].conj()).norm() < 1e-9 * scale);
            assert!((v[7] - v[6].conj()).norm() < 1e-9 * scale);
            assert!(v[4].im.abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn dephasing_extraction_trends() {
        // γφ^a vanishes at large detuning and grows as |Δ_ab| shrinks.
        let mut results = Vec::new();
        for dab_over_g in [14.0, 9.0, 6.0] {
            let mut p = Device::A.params();
            p.gamma = 0.0;
            p.gamma_phi = rad_per_us_from_hz(50.0e3);
            p.omega_b = p.omega_a - dab_over_g * p.g;
            // Drive at the a-like polariton to populate the readout mode.
            let basis = polariton_modes(&p);
            p.omega_d = basis.nu_a;
            p.eta = 30.0;
            let traces = ringdown_simulate(&p, 1.2, 0.55, 2e-4).unwrap();
            let fit = extract_dephasing(&traces).unwrap();
            results.push((dab_over_g, fit.gamma_phi_a, fit.lambda1, fit.lambda2));
        }
        let far = results[0].1;
        let mid = results[1].1;
        let near = results[2].1;
        assert!(
            far.abs() < 0.02 * results[0].3,
            "expected vanishing inherited dephasing, got {far} vs λ2 {}",
            results[0].3
        );
        assert!(
            near > mid && mid > far && far >= 0.0,
            "dephasing must grow with hybridization: {results:?}"
        );

        // Rates agree with the block eigenvalues on clean traces.
        let mut p = Device::A.params();
        p.gamma = 0.0;
        p.gamma_phi = rad_per_us_from_hz(50.0e3);
        p.omega_b = p.omega_a - 14.0 * p.g;
        let basis = polariton_modes(&p);
        p.omega_d = basis.nu_a;
        p.eta = 30.0;
        let traces = ringdown_simulate(&p, 1.2, 0.55, 2e-4).unwrap();
        let fit = extract_dephasing(&traces).unwrap();
        let sys = RingdownSystem::build(&p.with_eta(0.0));
        // Decay rate of the eigenmode dominating the probed component.
        let pick = |m: nalgebra::Matrix4<C64>, probe: usize| -> f64 {
            let eig = crate::linalg::eig4(&m, 1e-12).unwrap();
            let best = (0..4)
                .max_by(|&i, &j| {
                    let wi = eig.right[(probe, i)].norm() / eig.right.column(i).norm();
                    let wj = eig.right[(probe, j)].norm() / eig.right.column(j).norm();
                    wi.total_cmp(&wj)
                })
                .unwrap();
            -eig.values[best].re
        };
        let l1 = pick(sys.m1(), 0);
        let l2 = pick(sys.m2(), 0);
        assert_relative_eq!(fit.lambda1, l1, max_relative = 0.01);
        assert_relative_eq!(fit.lambda2, l2, max_relative = 0.01);
    }
}
