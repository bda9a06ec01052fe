//! Classical fixed points, linear stability, and phase-diagram
//! classification over drive-power sweeps.
//!
//! The steady state of the nonlinear mode satisfies a cubic in n = |β̄|²,
//!
//! ```text
//! [ (Δ̃_db + Λn)² + γ̃²/4 ] n = g²|χ_a|²η²
//! ```
//!
//! with the renormalized detuning Δ̃_db and damping γ̃ carrying the
//! cavity-mediated (Markov-reduced) self-interaction. β̄ keeps its phase from
//! the linear response and ᾱ follows from the cavity steady state.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eigenvalues4;
use crate::model::{drift, jacobian};
use crate::params::{PhaseState, SystemParams};
use crate::C64;

/// Real parts below this count as strictly stable; within it, marginal.
/// Marginal points are treated as unstable for no-SFP classification.
pub const STABILITY_RE_TOL: f64 = 1e-9;

/// One classical steady state with its linearization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPoint {
    /// Steady cavity amplitude ᾱ.
    pub alpha: C64,
    /// Steady nonlinear-mode amplitude β̄.
    pub beta: C64,
    /// Occupation |β̄|² (root of the steady-state cubic).
    pub n_b: f64,
    /// Jacobian spectrum at the fixed point.
    pub jac_eigs: [C64; 4],
    /// Largest eigenvalue real part.
    pub max_re_eig: f64,
    /// Strictly stable (max Re < −tolerance).
    pub stable: bool,
    /// |max Re| within the stability tolerance.
    pub marginal: bool,
    /// ‖drift‖ at the reconstructed state, internal units.
    pub residual: f64,
}

/// All fixed points at one drive condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadySolution {
    pub fixed_points: Vec<FixedPoint>,
    /// Two cubic roots coincided within 1e-8 relative (at a fold).
    pub degenerate: bool,
}

impl SteadySolution {
    pub fn stable_count(&self) -> usize {
        self.fixed_points.iter().filter(|f| f.stable).count()
    }
}

/// Real non-negative roots of the steady-state cubic, ascending, paired with
/// a degeneracy flag.
fn cubic_roots(p: &SystemParams) -> (Vec<f64>, bool) {
    let chi2 = p.chi_a().norm_sqr();
    let rhs = p.g * p.g * chi2 * p.eta * p.eta;
    let dt = p.delta_db_renorm();
    let gt = p.gamma_renorm();
    let lam = p.lambda;

    if rhs == 0.0 {
        return (vec![0.0], false);
    }
    if lam == 0.0 {
        return (vec![rhs / (dt * dt + 0.25 * gt * gt)], false);
    }

    // Monic form n³ + b n² + c n + d = 0.
    let b = 2.0 * dt / lam;
    let c = (dt * dt + 0.25 * gt * gt) / (lam * lam);
    let d = -rhs / (lam * lam);

    // Depressed cubic t³ + pt + q with n = t − b/3.
    let shift = b / 3.0;
    let pp = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = -4.0 * pp * pp * pp - 27.0 * q * q;

    let mut roots = Vec::with_capacity(3);
    if disc > 0.0 {
        // Three real roots (trigonometric form); pp < 0 is implied here.
        let m = 2.0 * (-pp / 3.0).sqrt();
        let arg = (3.0 * q / (pp * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        for k in 0..3 {
            let t = m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos();
            roots.push(t - shift);
        }
    } else {
        // One real root (Cardano).
        let half_q = 0.5 * q;
        let s = (half_q * half_q + pp * pp * pp / 27.0).max(0.0).sqrt();
        let t = (-half_q + s).cbrt() + (-half_q - s).cbrt();
        roots.push(t - shift);
    }

    // Newton polish on the original cubic; robust near folds where the
    // closed form loses digits.
    let f = |n: f64| ((n + b) * n + c) * n + d;
    let fp = |n: f64| (3.0 * n + 2.0 * b) * n + c;
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let deriv = fp(*r);
            if deriv.abs() > 1e-300 {
                let step = f(*r) / deriv;
                if step.is_finite() && step.abs() < 0.5 * (r.abs() + 1.0) {
                    *r -= step;
                }
            }
        }
    }

    roots.sort_by(f64::total_cmp);
    let scale = roots.iter().fold(1e-300f64, |a, r| a.max(r.abs()));
    let mut degenerate = false;
    for w in roots.windows(2) {
        if (w[1] - w[0]).abs() < 1e-8 * scale {
            degenerate = true;
        }
    }
    // Keep physical (non-negative) roots; tolerate tiny negative roundoff.
    let kept: Vec<f64> =
        roots.into_iter().filter(|&r| r > -1e-12 * scale).map(|r| r.max(0.0)).collect();
    (kept, degenerate)
}

/// Solves the classical steady states and classifies their stability.
///
/// Requires a finite cavity susceptibility (κ > 0 or Δ_da ≠ 0).
pub fn steady_states(p: &SystemParams) -> Result<SteadySolution> {
    p.validate()?;
    if p.kappa == 0.0 && p.delta_da() == 0.0 {
        return Err(Error::InvalidParam("chi_a diverges: kappa = 0 and delta_da = 0".into()));
    }

    let (roots, degenerate) = cubic_roots(p);
    let chi = p.chi_a();
    let i = C64::i();
    let dt = p.delta_db_renorm();
    let gt = p.gamma_renorm();

    let fixed_points = roots
        .into_iter()
        .map(|n| {
            let beta = if p.eta == 0.0 || p.g == 0.0 {
                C64::ZERO
            } else {
                C64::from(p.g * p.eta) * chi / C64::new(-0.5 * gt, dt + p.lambda * n)
            };
            let alpha = -chi * (i * p.g * beta + i * p.eta);
            let state = PhaseState::from_classical(alpha, beta);
            let jac_eigs = eigenvalues4(&jacobian(&state, p));
            let max_re_eig = jac_eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
            FixedPoint {
                alpha,
                beta,
                n_b: n,
                jac_eigs,
                max_re_eig,
                stable: max_re_eig < -STABILITY_RE_TOL,
                marginal: max_re_eig.abs() <= STABILITY_RE_TOL,
                residual: drift(&state, p).norm(),
            }
        })
        .collect();

    Ok(SteadySolution { fixed_points, degenerate })
}

/// Phase classification labels over a drive-power sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseLabel {
    /// One stable fixed point at every power.
    OneSfp,
    /// More than one fixed point for some power subset, always >= 1 stable.
    MultiFp,
    /// At least one power with zero stable fixed points.
    NoSfpSubset,
}

impl PhaseLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseLabel::OneSfp => "ONE_SFP",
            PhaseLabel::MultiFp => "MULTI_FP",
            PhaseLabel::NoSfpSubset => "NO_SFP_SUBSET",
        }
    }
}

/// Aggregated classification of one detuning point over a power sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseClass {
    pub label: PhaseLabel,
    /// (min, max) fixed-point count over the sweep.
    pub fp_count_range: (usize, usize),
    /// (min, max) stable fixed-point count over the sweep.
    pub sfp_count_range: (usize, usize),
}

/// Classifies one detuning point by sweeping drive powers.
pub fn classify_point(
    p: &SystemParams,
    powers_dbm: &[f64],
    offset_db: f64,
) -> Result<PhaseClass> {
    if powers_dbm.is_empty() {
        return Err(Error::InvalidParam("power sweep must be nonempty".into()));
    }
    let mut fp_range = (usize::MAX, 0usize);
    let mut sfp_range = (usize::MAX, 0usize);
    for &dbm in powers_dbm {
        let eta = p.eta_from_power_dbm(dbm, offset_db);
        let sol = steady_states(&p.with_eta(eta))?;
        let fp = sol.fixed_points.len();
        let sfp = sol.stable_count();
        fp_range = (fp_range.0.min(fp), fp_range.1.max(fp));
        sfp_range = (sfp_range.0.min(sfp), sfp_range.1.max(sfp));
    }
    let label = if sfp_range.0 == 0 {
        PhaseLabel::NoSfpSubset
    } else if fp_range.1 > 1 {
        PhaseLabel::MultiFp
    } else {
        PhaseLabel::OneSfp
    };
    Ok(PhaseClass { label, fp_count_range: fp_range, sfp_count_range: sfp_range })
}

/// Stability margin used by boundary bisection: the largest over the power
/// sweep of (smallest max-Re-eigenvalue among the fixed points). Positive
/// exactly when some power has no stable fixed point.
pub fn no_sfp_margin(p: &SystemParams, powers_dbm: &[f64], offset_db: f64) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &dbm in powers_dbm {
        let eta = p.eta_from_power_dbm(dbm, offset_db);
        let sol = steady_states(&p.with_eta(eta))?;
        let min_max_re =
            sol.fixed_points.iter().map(|f| f.max_re_eig).fold(f64::INFINITY, f64::min);
        best = best.max(min_max_re);
    }
    Ok(best)
}

/// Rectangular detuning grid (values in internal rad/µs).
#[derive(Debug, Clone)]
pub struct DetuningGrid {
    pub delta_da: Vec<f64>,
    pub delta_db: Vec<f64>,
}

impl DetuningGrid {
    /// Uniform grid from inclusive ranges.
    pub fn uniform(da: (f64, f64), n_da: usize, db: (f64, f64), n_db: usize) -> Self {
        Self { delta_da: linspace(da.0, da.1, n_da), delta_db: linspace(db.0, db.1, n_db) }
    }
}

/// Uniform inclusive grid of n points from a to b.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// One evaluated cell of the classification grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseCell {
    pub delta_da: f64,
    pub delta_db: f64,
    pub class: Option<PhaseClass>,
    pub error: Option<String>,
}

/// Classifies every grid cell independently (cells in row-major order,
/// Δ_da outer, Δ_db inner). Per-cell failures are recorded, not fatal.
pub fn phase_diagram(
    base: &SystemParams,
    grid: &DetuningGrid,
    powers_dbm: &[f64],
    offset_db: f64,
) -> Vec<PhaseCell> {
    let cells: Vec<(f64, f64)> = grid
        .delta_da
        .iter()
        .flat_map(|&da| grid.delta_db.iter().map(move |&db| (da, db)))
        .collect();
    cells
        .into_par_iter()
        .map(|(da, db)| {
            let p = base.with_delta_da(da).with_delta_db(db);
            match classify_point(&p, powers_dbm, offset_db) {
                Ok(class) => {
                    PhaseCell { delta_da: da, delta_db: db, class: Some(class), error: None }
                }
                Err(e) => PhaseCell {
                    delta_da: da,
                    delta_db: db,
                    class: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Device;
    use crate::units::rad_per_us_from_hz;
    use approx::assert_relative_eq;

    #[test]
    fn undriven_single_origin_fixed_point() {
        let p = Device::A.params();
        let sol = steady_states(&p).unwrap();
        assert_eq!(sol.fixed_points.len(), 1);
        let f = &sol.fixed_points[0];
        assert_relative_eq!(f.alpha.norm(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(f.beta.norm(), 0.0, epsilon = 1e-14);
        assert!(f.stable, "origin must be stable for damped params");
    }

    #[test]
    fn cubic_residual_on_random_params() {
        // Each returned n must satisfy the cubic to 1e-10 relative.
        let mut x: u64 = 0x12345678;
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            x as f64 / u64::MAX as f64
        };
        for _ in 0..200 {
            let mut p = Device::A.params();
            p.omega_d = p.omega_a + (next() - 0.5) * 2000.0;
            p.omega_b = p.omega_d - (next() - 0.5) * 800.0;
            p.lambda = 0.001 + next() * 0.2;
            p.eta = next() * 2.0e4;
            p.gamma_phi = next() * 0.1;
            let rhs = p.g * p.g * p.chi_a().norm_sqr() * p.eta * p.eta;
            let dt = p.delta_db_renorm();
            let gt = p.gamma_renorm();
            let sol = steady_states(&p).unwrap();
            assert!(!sol.fixed_points.is_empty());
            for f in &sol.fixed_points {
                let n = f.n_b;
                let lhs = ((dt + p.lambda * n).powi(2) + 0.25 * gt * gt) * n;
                if rhs > 0.0 {
                    assert!(
                        (lhs - rhs).abs() < 1e-10 * rhs,
                        "cubic residual {} at n={n}",
                        (lhs - rhs).abs() / rhs
                    );
                }
            }
        }
    }

    #[test]
    fn drift_residual_small_at_fixed_points() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        for dbm in [-120.0, -100.0, -90.0, -80.0] {
            let eta = p.eta_from_power_dbm(dbm, 0.0);
            let sol = steady_states(&p.with_eta(eta)).unwrap();
            for f in &sol.fixed_points {
                assert!(f.residual < 1e-9 * (1.0 + eta), "residual {} at {dbm} dBm", f.residual);
            }
        }
    }

    #[test]
    fn root_count_parity() {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-200.0e6))
            .with_delta_db(rad_per_us_from_hz(-45.0e6));
        for dbm in linspace(-132.0, -67.0, 80) {
            let eta = p.eta_from_power_dbm(dbm, 0.0);
            let sol = steady_states(&p.with_eta(eta)).unwrap();
            if !sol.degenerate {
                assert!(
                    sol.fixed_points.len() == 1 || sol.fixed_points.len() == 3,
                    "got {} roots at {dbm} dBm",
                    sol.fixed_points.len()
                );
            }
        }
    }

    #[test]
    fn kerr_bistability_at_large_detuning() {
        // |Δ_da| >> g puts the system in the Markov regime where the usual
        // Kerr bistability (3 fixed points, at least one stable) shows up
        // over part of the power range.
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-200.0e6))
            .with_delta_db(rad_per_us_from_hz(-45.0e6));
        let powers = linspace(-132.0, -67.0, 131);
        let mut saw_three = false;
        for &dbm in &powers {
            let eta = p.eta_from_power_dbm(dbm, 0.0);
            let sol = steady_states(&p.with_eta(eta)).unwrap();
            if sol.fixed_points.len() == 3 {
                saw_three = true;
            }
            assert!(sol.stable_count() >= 1, "lost all stable FPs at {dbm} dBm");
        }
        assert!(saw_three, "expected a bistable power subinterval");
        let class = classify_point(&p, &powers, 0.0).unwrap();
        assert_eq!(class.label, PhaseLabel::MultiFp);
    }

    #[test]
    fn zero_drive_sweep_is_one_sfp() {
        let p = Device::A.params();
        // Powers so small the drive is effectively zero.
        let class = classify_point(&p, &[-300.0, -280.0], 0.0).unwrap();
        assert_eq!(class.label, PhaseLabel::OneSfp);
        assert_eq!(class.fp_count_range, (1, 1));
    }

    #[test]
    fn weak_coupling_on_resonance_never_loses_stability() {
        // Artificial params with g < κ/2 driven on cavity resonance: the
        // mediated interaction is too weak to destabilize every fixed point.
        let mut p = Device::A.params().with_delta_da(0.0);
        p.g = 0.4 * p.kappa / 2.0;
        for db_mhz in [-30.0, -10.0, 0.0, 10.0, 30.0] {
            let p2 = p.with_delta_db(rad_per_us_from_hz(db_mhz * 1e6));
            let class = classify_point(&p2, &linspace(-132.0, -67.0, 140), 0.0).unwrap();
            assert_ne!(class.label, PhaseLabel::NoSfpSubset, "at delta_db = {db_mhz} MHz");
        }
    }

    #[test]
    fn single_cell_grid_reduces_to_classify_point() {
        let p = Device::A.params();
        let da = rad_per_us_from_hz(-47.8e6);
        let db = rad_per_us_from_hz(25.2e6);
        let grid = DetuningGrid { delta_da: vec![da], delta_db: vec![db] };
        let powers = linspace(-132.0, -67.0, 40);
        let cells = phase_diagram(&p, &grid, &powers, 0.0);
        assert_eq!(cells.len(), 1);
        let from_grid = cells[0].class.as_ref().unwrap();
        let direct = classify_point(&p.with_delta_da(da).with_delta_db(db), &powers, 0.0).unwrap();
        assert_eq!(from_grid.label, direct.label);
        assert_eq!(from_grid.fp_count_range, direct.fp_count_range);
    }
}
