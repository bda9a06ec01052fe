//! Adaptive Dormand–Prince 5(4) integration for fixed-size complex systems.
//!
//! The phase-space vector field, tangent-space co-integration, variational
//! (fundamental-matrix) systems, and the ringdown moment equations are all
//! small fixed-size complex ODEs, so the integrator is generic over the
//! state dimension `N` with `SVector<Complex64, N>` states. Dense output for
//! uniform resampling uses cubic Hermite interpolation on accepted steps.

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::C64;

/// Integration options.
#[derive(Debug, Clone, Copy)]
pub struct OdeOpts {
    /// Relative tolerance per component.
    pub rtol: f64,
    /// Absolute tolerance per component.
    pub atol: f64,
    /// Initial step; estimated from the vector field when absent.
    pub h_init: Option<f64>,
    /// Maximum step size.
    pub h_max: Option<f64>,
    /// Step budget before aborting.
    pub max_steps: usize,
    /// Abort when the sup-norm of the state exceeds this.
    pub divergence_norm: Option<f64>,
}

impl Default for OdeOpts {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            h_init: None,
            h_max: None,
            max_steps: 20_000_000,
            divergence_norm: Some(1e8),
        }
    }
}

impl OdeOpts {
    /// Same options with different tolerances.
    pub fn with_tol(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }
}

/// Counters reported after an integration.
#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    /// Largest accepted scaled error estimate (<= 1 by construction).
    pub max_err: f64,
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

/// Integrates dy/dt = f(t, y) from `t0` to `t_end`, returning the final
/// state. `on_step` observes every accepted step as
/// `(t_before, h, y_before, f_before, y_after, f_after)`, which is enough to
/// reconstruct a cubic Hermite interpolant on the step.
pub fn integrate_observed<const N: usize, F, S>(
    f: &F,
    t0: f64,
    y0: SVector<C64, N>,
    t_end: f64,
    opts: &OdeOpts,
    mut on_step: S,
) -> Result<(SVector<C64, N>, OdeStats)>
where
    F: Fn(f64, &SVector<C64, N>) -> SVector<C64, N>,
    S: FnMut(f64, f64, &SVector<C64, N>, &SVector<C64, N>, &SVector<C64, N>, &SVector<C64, N>),
{
    let span = t_end - t0;
    if span < 0.0 {
        return Err(Error::InvalidParam("t_end must be >= t0".into()));
    }
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut stats = OdeStats::default();
    if span == 0.0 {
        return Ok((y, stats));
    }

    let h_max = opts.h_max.unwrap_or(span);
    let mut h = opts.h_init.unwrap_or_else(|| initial_step(&y, &k1, opts)).min(h_max).min(span);

    while t < t_end {
        if stats.steps + stats.rejected >= opts.max_steps {
            return Err(Error::MaxSteps { t, max_steps: opts.max_steps });
        }
        if h < span * 1e-14 {
            // Step collapsed: the problem is stiffer than the budget allows.
            return Err(Error::MaxSteps { t, max_steps: opts.max_steps });
        }
        let h_step = h.min(t_end - t);

        let k2 = f(t + C2 * h_step, &(y + k1 * C64::from(A21 * h_step)));
        let k3 = f(
            t + C3 * h_step,
            &(y + k1 * C64::from(A31 * h_step) + k2 * C64::from(A32 * h_step)),
        );
        let k4 = f(
            t + C4 * h_step,
            &(y + k1 * C64::from(A41 * h_step)
                + k2 * C64::from(A42 * h_step)
                + k3 * C64::from(A43 * h_step)),
        );
        let k5 = f(
            t + C5 * h_step,
            &(y + k1 * C64::from(A51 * h_step)
                + k2 * C64::from(A52 * h_step)
                + k3 * C64::from(A53 * h_step)
                + k4 * C64::from(A54 * h_step)),
        );
        let k6 = f(
            t + h_step,
            &(y + k1 * C64::from(A61 * h_step)
                + k2 * C64::from(A62 * h_step)
                + k3 * C64::from(A63 * h_step)
                + k4 * C64::from(A64 * h_step)
                + k5 * C64::from(A65 * h_step)),
        );
        let y_new = y
            + k1 * C64::from(B1 * h_step)
            + k3 * C64::from(B3 * h_step)
            + k4 * C64::from(B4 * h_step)
            + k5 * C64::from(B5 * h_step)
            + k6 * C64::from(B6 * h_step);
        let k7 = f(t + h_step, &y_new);
        let err_vec = k1 * C64::from(E1 * h_step)
            + k3 * C64::from(E3 * h_step)
            + k4 * C64::from(E4 * h_step)
            + k5 * C64::from(E5 * h_step)
            + k6 * C64::from(E6 * h_step)
            + k7 * C64::from(E7 * h_step);

        let mut err: f64 = 0.0;
        for i in 0..N {
            let tol = opts.atol + opts.rtol * y[i].norm().max(y_new[i].norm());
            err = err.max(err_vec[i].norm() / tol);
        }

        if err <= 1.0 {
            on_step(t, h_step, &y, &k1, &y_new, &k7);
            t += h_step;
            y = y_new;
            k1 = k7; // FSAL
            stats.steps += 1;
            stats.max_err = stats.max_err.max(err);
            if let Some(limit) = opts.divergence_norm {
                let norm = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
                if norm > limit {
                    return Err(Error::Diverged { t, norm });
                }
            }
        } else {
            stats.rejected += 1;
        }

        let factor = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 5.0 };
        h = (h_step * factor.clamp(0.2, 5.0)).min(h_max);
    }
    Ok((y, stats))
}

fn initial_step<const N: usize>(y: &SVector<C64, N>, f0: &SVector<C64, N>, opts: &OdeOpts) -> f64 {
    let d0 = y.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let d1 = f0.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if d1 > 1e-12 {
        (0.01 * (d0 + opts.atol / opts.rtol.max(1e-30)) / d1).clamp(1e-12, 0.1)
    } else {
        1e-4
    }
}

/// Integrates without observation and returns the final state.
pub fn integrate<const N: usize, F>(
    f: &F,
    t0: f64,
    y0: SVector<C64, N>,
    t_end: f64,
    opts: &OdeOpts,
) -> Result<(SVector<C64, N>, OdeStats)>
where
    F: Fn(f64, &SVector<C64, N>) -> SVector<C64, N>,
{
    integrate_observed(f, t0, y0, t_end, opts, |_, _, _, _, _, _| {})
}

/// Integrates and emits the state at the uniform times t0 + k·`sample_dt`
/// (including k = 0) using cubic Hermite interpolation within accepted steps.
pub fn integrate_sampled<const N: usize, F, S>(
    f: &F,
    t0: f64,
    y0: SVector<C64, N>,
    t_end: f64,
    sample_dt: f64,
    opts: &OdeOpts,
    mut on_sample: S,
) -> Result<(SVector<C64, N>, OdeStats)>
where
    F: Fn(f64, &SVector<C64, N>) -> SVector<C64, N>,
    S: FnMut(usize, f64, &SVector<C64, N>),
{
    if sample_dt <= 0.0 {
        return Err(Error::InvalidParam("sample_dt must be > 0".into()));
    }
    let mut next_idx: usize = 0;
    let total = ((t_end - t0) / sample_dt + 1e-9).floor() as usize;
    let result = integrate_observed(f, t0, y0, t_end, opts, |t, h, ya, fa, yb, fb| {
        while next_idx <= total {
            let ts = t0 + next_idx as f64 * sample_dt;
            if ts < t - 1e-12 {
                next_idx += 1;
                continue;
            }
            if ts <= t + h + 1e-12 {
                let theta = ((ts - t) / h).clamp(0.0, 1.0);
                let y_s = hermite(theta, h, ya, fa, yb, fb);
                on_sample(next_idx, ts, &y_s);
                next_idx += 1;
            } else {
                break;
            }
        }
    })?;
    Ok(result)
}

fn hermite<const N: usize>(
    theta: f64,
    h: f64,
    y0: &SVector<C64, N>,
    f0: &SVector<C64, N>,
    y1: &SVector<C64, N>,
    f1: &SVector<C64, N>,
) -> SVector<C64, N> {
    // Standard cubic Hermite basis on [0, 1] scaled by the step length.
    let h00 = (1.0 + 2.0 * theta) * (1.0 - theta) * (1.0 - theta);
    let h10 = theta * (1.0 - theta) * (1.0 - theta);
    let h01 = theta * theta * (3.0 - 2.0 * theta);
    let h11 = theta * theta * (theta - 1.0);
    y0 * C64::from(h00) + f0 * C64::from(h10 * h) + y1 * C64::from(h01) + f1 * C64::from(h11 * h)
}
