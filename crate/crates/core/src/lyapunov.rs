//! Maximal Lyapunov exponent by tangent-space renormalization.
//!
//! A deterministic trajectory is co-integrated with a tangent vector
//! propagated by the time-dependent Jacobian. The tangent norm is reset to
//! one at the end of every interval Δτ; the per-interval log growth rates
//! average to the maximal exponent. Interval lengths must sit between the
//! fast system timescales and 1/|λ_M| for the estimate to be meaningful.

use nalgebra::{SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{drift, jacobian};
use crate::ode::{self, OdeOpts};
use crate::params::{PhaseState, SystemParams};
use crate::C64;

/// Dynamical regime from the sign of λ_M against the threshold ε_λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DynamicsClass {
    /// λ_M < −ε_λ: perturbations decay to a stable fixed point.
    StableFp,
    /// |λ_M| <= ε_λ: marginal direction along a stable limit cycle.
    LimitCycle,
    /// λ_M > ε_λ: exponential sensitivity, chaos.
    Chaos,
}

impl DynamicsClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            DynamicsClass::StableFp => "STABLE_FP",
            DynamicsClass::LimitCycle => "LIMIT_CYCLE",
            DynamicsClass::Chaos => "CHAOS",
        }
    }
}

/// Result of a maximal-Lyapunov computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovResult {
    /// Averaged maximal exponent (1/µs).
    pub lambda_m: f64,
    /// Per-interval estimates (one per renormalization).
    pub per_iterate: Vec<f64>,
    /// Renormalization interval (µs).
    pub delta_tau: f64,
    /// Number of intervals.
    pub n_iterates: usize,
    /// Running-mean convergence check passed.
    pub converged: bool,
    /// Three-way classification at the threshold used.
    pub class: DynamicsClass,
}

/// Options for [`max_lyapunov`].
#[derive(Debug, Clone, Copy)]
pub struct LyapunovOpts {
    /// Transient integration before tangent accumulation starts.
    pub transient: f64,
    /// Integrator tolerance.
    pub tol: f64,
    /// Classification threshold ε_λ (1/µs); defaults to 1e-3·κ at call time
    /// when zero.
    pub epsilon_lambda: f64,
}

impl Default for LyapunovOpts {
    fn default() -> Self {
        Self { transient: 0.0, tol: 1e-9, epsilon_lambda: 0.0 }
    }
}

/// Default renormalization interval, Δτ = 5/κ.
pub fn default_delta_tau(p: &SystemParams) -> f64 {
    5.0 / p.kappa
}

/// Default iterate count.
pub const DEFAULT_N_P: usize = 2000;

/// Computes the maximal Lyapunov exponent of the classical flow started at
/// `z0`, with `n_p` renormalization intervals of length `delta_tau`.
///
/// Fails with [`Error::NonConverged`] when the mean over the last quartile
/// of iterates differs from the overall mean by more than 10% (relative to
/// the larger of the mean and ε_λ).
pub fn max_lyapunov(
    p: &SystemParams,
    z0: &PhaseState,
    delta_tau: f64,
    n_p: usize,
    opts: &LyapunovOpts,
) -> Result<LyapunovResult> {
    if delta_tau <= 0.0 {
        return Err(Error::InvalidParam("delta_tau must be > 0".into()));
    }
    if n_p < 4 {
        return Err(Error::InvalidParam("need at least 4 iterates".into()));
    }
    let eps_lambda =
        if opts.epsilon_lambda > 0.0 { opts.epsilon_lambda } else { 1e-3 * p.kappa };
    let ode_opts = OdeOpts {
        rtol: opts.tol,
        atol: opts.tol * 1e-3,
        divergence_norm: None, // tangent growth is handled by renormalization
        ..OdeOpts::default()
    };

    // Settle onto the attractor first.
    let mut zeta = z0.zeta;
    if opts.transient > 0.0 {
        let f = |_t: f64, y: &SVector<C64, 4>| drift(&PhaseState::from_vector(*y), p);
        let (zf, _) = ode::integrate(
            &f,
            0.0,
            zeta,
            opts.transient,
            &OdeOpts { divergence_norm: Some(crate::dynamics::DIVERGENCE_NORM), ..ode_opts },
        )?;
        zeta = zf;
    }

    // Combined orbit + tangent system.
    let f = |_t: f64, y: &SVector<C64, 8>| {
        let z = PhaseState::from_vector(Vector4::new(y[0], y[1], y[2], y[3]));
        let a = drift(&z, p);
        let j = jacobian(&z, p);
        let tangent = Vector4::new(y[4], y[5], y[6], y[7]);
        let jt = j * tangent;
        SVector::<C64, 8>::from([a[0], a[1], a[2], a[3], jt[0], jt[1], jt[2], jt[3]])
    };

    // Deterministic initial tangent, conjugate-paired and normalized.
    let mut tangent =
        Vector4::new(C64::new(0.5, 0.2), C64::new(0.5, -0.2), C64::new(0.4, -0.3), C64::new(0.4, 0.3));
    tangent /= C64::from(tangent.norm());

    let mut per_iterate = Vec::with_capacity(n_p);
    for _ in 0..n_p {
        let mut y = SVector::<C64, 8>::zeros();
        for i in 0..4 {
            y[i] = zeta[i];
            y[4 + i] = tangent[i];
        }
        let (yf, _) = ode::integrate(&f, 0.0, y, delta_tau, &ode_opts)?;
        zeta = Vector4::new(yf[0], yf[1], yf[2], yf[3]);
        let orbit_norm = zeta.norm();
        if !orbit_norm.is_finite() || orbit_norm > crate::dynamics::DIVERGENCE_NORM {
            return Err(Error::Diverged { t: 0.0, norm: orbit_norm });
        }
        tangent = Vector4::new(yf[4], yf[5], yf[6], yf[7]);
        let growth = tangent.norm();
        if growth <= 0.0 || !growth.is_finite() {
            return Err(Error::Diverged { t: 0.0, norm: growth });
        }
        per_iterate.push(growth.ln() / delta_tau);
        tangent /= C64::from(growth);
    }

    let lambda_m = per_iterate.iter().sum::<f64>() / n_p as f64;
    let tail = &per_iterate[(3 * n_p) / 4..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    // Drift check: the last-quartile mean must agree with the overall mean
    // to 10%, except that a deviation already consistent with the tail's own
    // sampling scatter (3σ of its mean) is not evidence of drift. On a limit
    // cycle the per-iterate series oscillates with the orbit phase, so the
    // scatter floor is what keeps the marginal case decidable.
    let tail_var = tail.iter().map(|x| (x - tail_mean) * (x - tail_mean)).sum::<f64>()
        / tail.len().max(1) as f64;
    let tail_sigma = (tail_var / tail.len().max(1) as f64).sqrt();
    let denom = lambda_m.abs().max(eps_lambda);
    let converged = (tail_mean - lambda_m).abs() <= (0.1 * denom).max(3.0 * tail_sigma);

    let class = if lambda_m < -eps_lambda {
        DynamicsClass::StableFp
    } else if lambda_m > eps_lambda {
        DynamicsClass::Chaos
    } else {
        DynamicsClass::LimitCycle
    };

    let result = LyapunovResult {
        lambda_m,
        per_iterate,
        delta_tau,
        n_iterates: n_p,
        converged,
        class,
    };
    if !converged {
        return Err(Error::NonConverged { overall: lambda_m, last_quartile: tail_mean });
    }
    Ok(result)
}

/// Direct short-horizon estimate λ ≈ log(‖z(t)‖/‖z(0)‖)/t without
/// renormalization. Only usable while the tangent norm stays within
/// floating-point range; serves as an independent cross-check of the
/// renormalized estimator on short horizons.
pub fn direct_log_norm_estimate(
    p: &SystemParams,
    z0: &PhaseState,
    horizon: f64,
    tol: f64,
) -> Result<f64> {
    let f = |_t: f64, y: &SVector<C64, 8>| {
        let z = PhaseState::from_vector(Vector4::new(y[0], y[1], y[2], y[3]));
        let a = drift(&z, p);
        let j = jacobian(&z, p);
        let tangent = Vector4::new(y[4], y[5], y[6], y[7]);
        let jt = j * tangent;
        SVector::<C64, 8>::from([a[0], a[1], a[2], a[3], jt[0], jt[1], jt[2], jt[3]])
    };
    let mut y = SVector::<C64, 8>::zeros();
    for i in 0..4 {
        y[i] = z0.zeta[i];
    }
    let t0 = Vector4::new(
        C64::new(0.5, 0.2),
        C64::new(0.5, -0.2),
        C64::new(0.4, -0.3),
        C64::new(0.4, 0.3),
    );
    let n0 = t0.norm();
    for i in 0..4 {
        y[4 + i] = t0[i] / C64::from(n0);
    }
    let opts = OdeOpts {
        rtol: tol,
        atol: tol * 1e-3,
        divergence_norm: Some(1e280),
        ..OdeOpts::default()
    };
    let (yf, _) = ode::integrate(&f, 0.0, y, horizon, &opts)?;
    let nf = Vector4::new(yf[4], yf[5], yf[6], yf[7]).norm();
    Ok(nf.ln() / horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigenvalues4;
    use crate::params::Device;
    use crate::units::rad_per_us_from_hz;

    #[test]
    fn linear_system_matches_max_eigenvalue() {
        // Λ = 0 makes the flow linear: λ_M is exactly max Re eig(J).
        let mut p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        p.lambda = 0.0;
        p.eta = 0.0;
        let z0 = PhaseState::from_classical(C64::new(1.0, 0.0), C64::new(0.5, 0.5));
        let eigs = eigenvalues4(&jacobian(&z0, &p));
        let expect = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);

        let dt = default_delta_tau(&p);
        let res = max_lyapunov(&p, &z0, dt, 400, &LyapunovOpts::default()).unwrap();
        let rel = (res.lambda_m - expect).abs() / expect.abs();
        assert!(rel < 0.01, "lambda {} vs eig {} (rel {rel})", res.lambda_m, expect);
        assert_eq!(res.class, DynamicsClass::StableFp);
    }

    #[test]
    fn stable_point_in_phase_diagram_is_negative() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        let eta = p.eta_from_power_dbm(-90.0, 0.0);
        let p = p.with_eta(eta);
        let opts = LyapunovOpts { transient: 1.0, ..LyapunovOpts::default() };
        let res =
            max_lyapunov(&p, &PhaseState::origin(), default_delta_tau(&p), 300, &opts).unwrap();
        assert!(res.lambda_m < 0.0);
        assert_eq!(res.class, DynamicsClass::StableFp);
    }
}
