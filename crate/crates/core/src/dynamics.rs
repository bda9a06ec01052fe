//! Deterministic trajectory integration, limit-cycle refinement, and the
//! non-Markovian effective-equation cross-check.

use nalgebra::{Matrix4, Matrix5, SVector, Vector4, Vector5};

use crate::error::{Error, Result};
use crate::model::{drift, jacobian};
use crate::ode::{self, OdeOpts};
use crate::params::{PhaseState, SystemParams};
use crate::C64;

/// Norm beyond which deterministic integration aborts as diverged.
pub const DIVERGENCE_NORM: f64 = 1e8;

/// A deterministically integrated trajectory sampled on a uniform grid.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Time of the first sample.
    pub t0: f64,
    /// Uniform sample spacing (µs).
    pub dt: f64,
    /// Sampled states.
    pub states: Vec<Vector4<C64>>,
    /// Accepted integrator steps.
    pub steps: usize,
    /// Largest scaled local error estimate among accepted steps.
    pub max_err: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn alpha(&self, i: usize) -> C64 {
        self.states[i][0]
    }

    pub fn beta(&self, i: usize) -> C64 {
        self.states[i][2]
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        if t <= self.t0 {
            return 0;
        }
        (((t - self.t0) / self.dt).ceil() as usize).min(self.states.len().saturating_sub(1))
    }

    /// α samples from `start` to the end.
    pub fn alpha_tail(&self, start: usize) -> Vec<C64> {
        self.states[start..].iter().map(|z| z[0]).collect()
    }
}

/// Integrates the classical (deterministic) equations of motion from `z0`
/// over `[0, t_end]` with local error tolerance `tol`, sampling every
/// `sample_dt`.
pub fn integrate_classical(
    p: &SystemParams,
    z0: &PhaseState,
    t_end: f64,
    tol: f64,
    sample_dt: f64,
) -> Result<Trajectory> {
    if tol <= 0.0 {
        return Err(Error::InvalidParam("tol must be > 0".into()));
    }
    p.validate()?;
    let opts = OdeOpts {
        rtol: tol,
        atol: tol * 1e-3,
        divergence_norm: Some(DIVERGENCE_NORM),
        ..OdeOpts::default()
    };
    let f = |_t: f64, y: &SVector<C64, 4>| drift(&PhaseState::from_vector(*y), p);
    let n_samples = (t_end / sample_dt).floor() as usize + 1;
    let mut states = Vec::with_capacity(n_samples);
    let (_, stats) =
        ode::integrate_sampled(&f, 0.0, z0.zeta, t_end, sample_dt, &opts, |_, _, y| {
            states.push(*y);
        })?;
    Ok(Trajectory { t0: 0.0, dt: sample_dt, states, steps: stats.steps, max_err: stats.max_err })
}

/// A closed periodic orbit of the classical flow.
#[derive(Debug, Clone)]
pub struct LimitCycle {
    /// A point on the orbit (conjugate-paired).
    pub state: PhaseState,
    /// Orbit period (µs).
    pub period: f64,
    /// ‖Φ_T(z) − z‖ after refinement.
    pub closure: f64,
}

// Reduced real coordinates (Re α, Im α, Re β, Im β) <-> paired ζ.
fn embed(u: &nalgebra::Vector4<f64>) -> Vector4<C64> {
    let a = C64::new(u[0], u[1]);
    let b = C64::new(u[2], u[3]);
    Vector4::new(a, a.conj(), b, b.conj())
}

fn reduce(z: &Vector4<C64>) -> nalgebra::Vector4<f64> {
    nalgebra::Vector4::new(z[0].re, z[0].im, z[2].re, z[2].im)
}

/// Layout of the combined orbit + variational state: components 0..4 hold ζ,
/// components 4..20 hold R column-major.
fn variational_rhs(p: &SystemParams, y: &SVector<C64, 20>) -> SVector<C64, 20> {
    let zeta = Vector4::new(y[0], y[1], y[2], y[3]);
    let state = PhaseState::from_vector(zeta);
    let a = drift(&state, p);
    let j = jacobian(&state, p);
    let mut r = Matrix4::<C64>::zeros();
    for c in 0..4 {
        for row in 0..4 {
            r[(row, c)] = y[4 + 4 * c + row];
        }
    }
    let jr = j * r;
    let mut out = SVector::<C64, 20>::zeros();
    for i in 0..4 {
        out[i] = a[i];
    }
    for c in 0..4 {
        for row in 0..4 {
            out[4 + 4 * c + row] = jr[(row, c)];
        }
    }
    out
}

/// Flows (ζ, R) over `[0, t]` with R(0) = I; returns the final state and the
/// variational matrix R(t).
pub(crate) fn flow_with_variational(
    p: &SystemParams,
    z0: &Vector4<C64>,
    t: f64,
    opts: &OdeOpts,
) -> Result<(Vector4<C64>, Matrix4<C64>)> {
    let mut y0 = SVector::<C64, 20>::zeros();
    for i in 0..4 {
        y0[i] = z0[i];
    }
    for c in 0..4 {
        y0[4 + 4 * c + c] = C64::from(1.0);
    }
    let f = |_t: f64, y: &SVector<C64, 20>| variational_rhs(p, y);
    let (y, _) = ode::integrate(&f, 0.0, y0, t, opts)?;
    let zf = Vector4::new(y[0], y[1], y[2], y[3]);
    let mut r = Matrix4::zeros();
    for c in 0..4 {
        for row in 0..4 {
            r[(row, c)] = y[4 + 4 * c + row];
        }
    }
    Ok((zf, r))
}

// Real 4x4 action of the complex pairing-preserving matrix K on reduced
// coordinates.
fn reduce_matrix(k: &Matrix4<C64>) -> nalgebra::Matrix4<f64> {
    let mut m = nalgebra::Matrix4::<f64>::zeros();
    for j in 0..4 {
        let mut e = nalgebra::Vector4::<f64>::zeros();
        e[j] = 1.0;
        let w = k * embed(&e);
        m.set_column(j, &reduce(&w));
    }
    m
}

/// Refines a limit-cycle guess by single-shooting Newton on (point, period)
/// with the correction constrained orthogonal to the flow direction.
///
/// Succeeds when the orbit closes to `closure_tol` (absolute, internal
/// units).
pub fn refine_limit_cycle(
    p: &SystemParams,
    guess: &PhaseState,
    guess_period: f64,
    closure_tol: f64,
) -> Result<LimitCycle> {
    if guess_period <= 0.0 {
        return Err(Error::InvalidParam("guess period must be > 0".into()));
    }
    let opts = OdeOpts {
        rtol: 1e-12,
        atol: 1e-12,
        divergence_norm: Some(DIVERGENCE_NORM),
        ..OdeOpts::default()
    };
    let mut u = reduce(&guess.zeta);
    let mut period = guess_period;
    let mut best: Option<LimitCycle> = None;

    for _ in 0..25 {
        let z0 = embed(&u);
        let (zf, k) = flow_with_variational(p, &z0, period, &opts)?;
        let closure_vec = reduce(&zf) - u;
        let closure = (zf - z0).norm();
        if best.as_ref().map_or(true, |b| closure < b.closure) {
            best = Some(LimitCycle { state: PhaseState::from_vector(z0), period, closure });
        }
        if closure < closure_tol {
            break;
        }

        let m = reduce_matrix(&k);
        let v_end = reduce(&drift(&PhaseState::from_vector(zf), p));
        let v_start = reduce(&drift(&PhaseState::from_vector(z0), p));

        // Bordered Newton system: [M − I, v(T); v(0)ᵀ, 0]·[δu; δT] = −[F; 0].
        let mut sys = Matrix5::<f64>::zeros();
        for r in 0..4 {
            for c in 0..4 {
                sys[(r, c)] = m[(r, c)] - if r == c { 1.0 } else { 0.0 };
            }
            sys[(r, 4)] = v_end[r];
            sys[(4, r)] = v_start[r];
        }
        let mut rhs = Vector5::<f64>::zeros();
        for r in 0..4 {
            rhs[r] = -closure_vec[r];
        }
        let delta = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::IllConditioned("singular shooting system".into()))?;
        // Damp oversized steps to keep the iteration inside the basin.
        let scale = 1.0 + u.norm();
        let step_norm = delta.fixed_rows::<4>(0).norm();
        let damp = if step_norm > 0.2 * scale { 0.2 * scale / step_norm } else { 1.0 };
        for r in 0..4 {
            u[r] += damp * delta[r];
        }
        period += damp * delta[4];
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::ClosureFail { closure, tol: closure_tol });
        }
    }

    let lc = best.expect("at least one iteration ran");
    if lc.closure < closure_tol {
        Ok(lc)
    } else {
        Err(Error::ClosureFail { closure: lc.closure, tol: closure_tol })
    }
}

/// Finds a limit cycle by settling a trajectory onto the attractor, reading
/// the period off the comb spectrum, and Newton-refining the closure.
pub fn find_limit_cycle(
    p: &SystemParams,
    settle_time: f64,
    closure_tol: f64,
) -> Result<LimitCycle> {
    let sample_dt = 0.25 / (p.g.max(p.kappa) + p.delta_da().abs() + p.delta_db().abs());
    let record = 4.0 * settle_time.max(0.5);
    let traj = integrate_classical(p, &PhaseState::origin(), record, 1e-10, sample_dt)?;
    let spec = crate::spectrum::comb_spectrum(&traj, settle_time, p.omega_d)?;
    let spacing =
        spec.spacing_rad_per_us.ok_or(Error::NoComb { peaks: spec.peak_indices.len() })?;
    let period = 2.0 * std::f64::consts::PI / spacing;
    let last = traj.states[traj.len() - 1];
    refine_limit_cycle(p, &PhaseState::from_vector(last), period, closure_tol)
}

/// Largest residual of the effective single-mode equation along a
/// trajectory that starts from rest (α(0) = 0).
///
/// The linear mode is eliminated exactly in favor of a memory kernel
/// F(τ) = e^{(iΔ_da − κ/2)τ}: the nonlinear amplitude then obeys
///
/// ```text
/// β̇ = (iΔ_db − (γ+γ_φ)/2) β + iΛ|β|²β − gη χ_a (1 − F(t)) − g² (F ∗ β)(t)
/// ```
///
/// where the (1 − F(t)) factor is the exact finite-time drive transient; it
/// settles to the steady drive term on the cavity timescale 2/κ. The
/// convolution is evaluated by the trapezoid rule on the trajectory grid.
pub fn effective_beta_residual(traj: &Trajectory, p: &SystemParams) -> Result<f64> {
    if traj.len() < 3 {
        return Err(Error::InvalidParam("trajectory too short for convolution".into()));
    }
    if traj.states[0][0].norm() > 1e-9 {
        return Err(Error::InvalidParam("trajectory must start from rest (alpha(0) = 0)".into()));
    }
    let i = C64::i();
    let dt = traj.dt;
    let n = traj.len();
    let chi = p.chi_a();
    let lam_f = C64::new(-0.5 * p.kappa, p.delta_da()); // kernel exponent
    let half_gb = 0.5 * p.gamma_b_total();

    // Kernel samples F(k·dt); the kernel has decayed to ~5e-12 beyond
    // τ = 52/κ, so the convolution can be truncated there.
    let m_max = if p.kappa > 0.0 {
        ((52.0 / p.kappa / dt).ceil() as usize).min(n - 1)
    } else {
        n - 1
    };
    let kernel: Vec<C64> = (0..n).map(|k| (lam_f * (k as f64 * dt)).exp()).collect();
    let betas: Vec<C64> = (0..n).map(|k| traj.beta(k)).collect();

    let mut max_resid = 0.0f64;
    for j in 1..n {
        // Composite Simpson for (F ∗ β)(t_j) = ∫ F(τ) β(t_j − τ) dτ; the
        // integrand oscillates at the full two-mode rate, which trapezoid
        // quadrature does not resolve to the required accuracy.
        let upper = j.min(m_max);
        let integrand = |m: usize| kernel[m] * betas[j - m];
        let mut conv = C64::ZERO;
        let even_end = if upper % 2 == 0 { upper } else { upper - 1 };
        if even_end >= 2 {
            let mut acc = integrand(0) + integrand(even_end);
            let mut m = 1;
            while m < even_end {
                acc += 4.0 * integrand(m);
                if m + 1 < even_end {
                    acc += 2.0 * integrand(m + 1);
                }
                m += 2;
            }
            conv += acc * (dt / 3.0);
        }
        if upper % 2 == 1 {
            // One trapezoid panel closes an odd interval count; it sits at
            // the largest τ where the kernel is smallest (or at j = 1 where
            // β(0) = 0), so its low order does not limit the total error.
            conv += 0.5 * (integrand(upper - 1) + integrand(upper)) * dt;
        }

        let state = PhaseState::from_vector(traj.states[j]);
        let beta_dot = drift(&state, p)[2];
        let b = betas[j];
        let rhs = (i * p.delta_db() - half_gb) * b + i * p.lambda * b.norm_sqr() * b
            - p.g * p.eta * chi * (C64::from(1.0) - kernel[j])
            - p.g * p.g * conv;
        max_resid = max_resid.max((beta_dot - rhs).norm());
    }
    Ok(max_resid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Device;
    use crate::steady::steady_states;
    use crate::units::rad_per_us_from_hz;

    #[test]
    fn zero_drive_zero_state_stays_zero() {
        let p = Device::A.params();
        let traj = integrate_classical(&p, &PhaseState::origin(), 0.5, 1e-9, 0.01).unwrap();
        for z in &traj.states {
            assert_eq!(z.norm(), 0.0);
        }
    }

    #[test]
    fn converges_to_stable_fixed_point() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        let eta = p.eta_from_power_dbm(-90.0, 0.0);
        let p = p.with_eta(eta);
        let sol = steady_states(&p).unwrap();
        assert_eq!(sol.fixed_points.len(), 1);
        let fp = &sol.fixed_points[0];
        let target = PhaseState::from_classical(fp.alpha, fp.beta);

        let traj = integrate_classical(&p, &PhaseState::origin(), 2.5, 1e-10, 0.01).unwrap();
        let last = traj.states[traj.len() - 1];
        let rel = (last - target.zeta).norm() / target.zeta.norm();
        assert!(rel < 1e-6, "relative deviation {rel}");
    }

    #[test]
    fn conjugate_pairing_is_preserved() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6))
            .with_eta(2e4);
        let z0 = PhaseState::from_classical(C64::new(0.5, -0.3), C64::new(1.0, 2.0));
        let traj = integrate_classical(&p, &z0, 1.0, 1e-10, 0.005).unwrap();
        for z in &traj.states {
            let defect = PhaseState::from_vector(*z).pairing_defect();
            assert!(defect < 1e-7 * (1.0 + z.norm()), "pairing defect {defect}");
        }
    }

    #[test]
    fn effective_equation_reduces_to_duffing_when_uncoupled() {
        let mut p = Device::A.params();
        p.g = 0.0;
        p.eta = 0.0;
        let z0 = PhaseState::from_classical(C64::ZERO, C64::new(1.5, -0.5));
        let traj = integrate_classical(&p, &z0, 0.5, 1e-11, 0.002).unwrap();
        let resid = effective_beta_residual(&traj, &p).unwrap();
        assert!(resid < 1e-8, "residual {resid}");
    }

    #[test]
    fn effective_equation_matches_two_mode_dynamics() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        let eta = p.eta_from_power_dbm(-73.0, 0.0); // comb regime
        let p = p.with_eta(eta);
        let traj = integrate_classical(&p, &PhaseState::origin(), 1.0, 1e-11, 1.25e-4).unwrap();
        let resid = effective_beta_residual(&traj, &p).unwrap();
        // Scale: largest |β̇| along the trajectory.
        let max_bdot = (0..traj.len())
            .map(|k| drift(&PhaseState::from_vector(traj.states[k]), &p)[2].norm())
            .fold(0.0, f64::max);
        assert!(
            resid < 1e-4 * max_bdot,
            "residual {resid} vs scale {max_bdot} (ratio {})",
            resid / max_bdot
        );
    }

    #[test]
    fn markov_limit_of_memory_kernel() {
        // With a very lossy cavity the convolution becomes instantaneous:
        // g²∫F dτ = g²χ_a, whose real/imaginary parts are exactly the
        // renormalization terms in Δ̃_db and γ̃.
        let mut p = Device::A.params();
        p.kappa = 50.0 * p.kappa;
        let p = p
            .with_delta_da(rad_per_us_from_hz(-5.0e6))
            .with_delta_db(rad_per_us_from_hz(3.0e6));
        let chi = p.chi_a();
        let g2chi = p.g * p.g * chi;
        let markov = C64::new(-0.5 * p.gamma_renorm(), p.delta_db_renorm());
        let direct = C64::new(-0.5 * p.gamma_b_total(), p.delta_db()) - g2chi;
        assert!(
            (markov - direct).norm() < 1e-10 * markov.norm(),
            "Markov reduction mismatch: {markov} vs {direct}"
        );
    }
}
