//! Two-mode Kerr comb simulator: a linear cavity coupled to a weakly
//! Kerr-nonlinear mode, driven by a single coherent tone.
//!
//! The crate is organized around the phase-space description of the driven
//! dissipative system. A four-component complex state `(α, α†, β, β†)` evolves
//! under a deterministic drift ([`model::drift`]) plus multiplicative noise
//! ([`model::noise_matrices`]) whenever the Kerr strength or pure dephasing is
//! nonzero. On top of that sit:
//!
//! - [`steady`]: classical fixed points, linear stability, phase-diagram
//!   classification over drive-power sweeps.
//! - [`dynamics`]: deterministic trajectory integration, limit-cycle
//!   refinement, and the effective single-mode (memory-kernel) cross-check.
//! - [`spectrum`]: comb spectra and spacing detection from sampled
//!   trajectories.
//! - [`lyapunov`]: maximal Lyapunov exponent via tangent-space
//!   renormalization.
//! - [`sde`] / [`coherence`]: ensemble stochastic integration, steady-state
//!   two-time correlations, output filtering, `G¹(τ)` and coherence times.
//! - [`floquet`]: Floquet eigensystem of the linearized dynamics around a
//!   limit cycle and the phase-diffusion coherence estimate.
//! - [`calibration`]: polariton measurement models (effective Kerr constant,
//!   photon-number calibration, ringdown dephasing extraction).
//!
//! Internal units are angular frequency in rad/µs and time in µs, which keeps
//! device-scale magnitudes O(1)–O(100). Conversions from laboratory units
//! (Hz, dBm) live in [`units`].

pub mod calibration;
pub mod coherence;
pub mod dynamics;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod ode;
pub mod params;
pub mod sde;
pub mod spectrum;
pub mod steady;
pub mod units;

pub use error::Error;
pub use params::{Device, PhaseState, SystemParams};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex64;
