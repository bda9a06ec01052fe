//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the analysis modules.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument failed validation.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A trajectory left the trusted phase-space region.
    #[error("trajectory diverged at t = {t} (norm {norm:.3e})")]
    Diverged { t: f64, norm: f64 },

    /// The adaptive integrator exhausted its step budget.
    #[error("integrator exceeded {max_steps} steps at t = {t}")]
    MaxSteps { t: f64, max_steps: usize },

    /// Fewer than three spectral peaks were found above the noise floor.
    #[error("no comb detected: {peaks} peak(s) above the noise floor")]
    NoComb { peaks: usize },

    /// Lyapunov iteration did not converge to a stable running mean.
    #[error("Lyapunov estimate not converged: overall {overall:.3e}, last quartile {last_quartile:.3e}")]
    NonConverged { overall: f64, last_quartile: f64 },

    /// Limit-cycle closure failed the tolerance required downstream.
    #[error("orbit closure {closure:.3e} exceeds tolerance {tol:.3e}")]
    ClosureFail { closure: f64, tol: f64 },

    /// Floquet multipliers too close to each other to separate eigenvectors.
    #[error("degenerate multipliers: spacing {spacing:.3e}")]
    Degenerate { spacing: f64 },

    /// Steady-state averages changed when the transient cut was doubled.
    #[error("steady state not reached: correlation shift {shift:.3e} exceeds {allowed:.3e}")]
    NotSteady { shift: f64, allowed: f64 },

    /// An envelope or parameter fit had unacceptable quality.
    #[error("fit quality too poor: R^2 = {r2:.4}")]
    FitPoor { r2: f64 },

    /// A fit problem was too flat or collinear to determine its parameters.
    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    /// Pump calibration requested with an unoccupied polariton mode.
    #[error("polariton occupation {occupation:.3e} below threshold")]
    ZeroOccupation { occupation: f64 },

    /// Objective was flat over the candidate grid.
    #[error("estimate unidentifiable: objective spread {spread:.3e}")]
    Unidentifiable { spread: f64 },

    /// Eigenvalue iteration failed (defective or near-defective matrix).
    #[error("eigenvector iteration failed: residual {residual:.3e}")]
    EigenFailure { residual: f64 },
}

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
