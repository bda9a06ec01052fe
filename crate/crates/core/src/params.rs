//! Physical parameter set, device presets, and the phase-space state vector.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units;
use crate::C64;

/// Full physical parameter set of the two-mode model, in internal units
/// (angular rad/µs).
///
/// Detunings are always derived from the stored frequencies, never stored
/// separately, so the triple (ω_d, ω_a, Δ_da) cannot fall out of sync.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Bare linear (cavity) mode frequency.
    pub omega_a: f64,
    /// Bare nonlinear mode frequency.
    pub omega_b: f64,
    /// Drive frequency.
    pub omega_d: f64,
    /// Linear coupling strength between the modes.
    pub g: f64,
    /// Kerr strength, stored positive; enters the Hamiltonian with a -Λ/2
    /// prefactor on the two-photon term.
    pub lambda: f64,
    /// Linear-mode energy decay rate.
    pub kappa: f64,
    /// Bare nonlinear-mode energy decay rate.
    pub gamma: f64,
    /// Pure dephasing rate of the nonlinear mode.
    pub gamma_phi: f64,
    /// Drive amplitude (real, >= 0).
    pub eta: f64,
}

impl SystemParams {
    /// Drive detuning from the linear mode, Δ_da = ω_d − ω_a.
    pub fn delta_da(&self) -> f64 {
        self.omega_d - self.omega_a
    }

    /// Drive detuning from the nonlinear mode, Δ_db = ω_d − ω_b.
    pub fn delta_db(&self) -> f64 {
        self.omega_d - self.omega_b
    }

    /// Bare mode-mode detuning, Δ_ab = ω_a − ω_b.
    pub fn delta_ab(&self) -> f64 {
        self.omega_a - self.omega_b
    }

    /// Total nonlinear-mode amplitude damping, γ + γ_φ.
    pub fn gamma_b_total(&self) -> f64 {
        self.gamma + self.gamma_phi
    }

    /// Linear-mode susceptibility χ_a = (−iΔ_da + κ/2)⁻¹.
    pub fn chi_a(&self) -> C64 {
        C64::new(0.5 * self.kappa, -self.delta_da()).inv()
    }

    /// Renormalized nonlinear-mode detuning after adiabatic elimination of
    /// the linear mode, Δ̃_db = Δ_db − g²|χ_a|²Δ_da.
    pub fn delta_db_renorm(&self) -> f64 {
        let chi2 = self.chi_a().norm_sqr();
        self.delta_db() - self.g * self.g * chi2 * self.delta_da()
    }

    /// Renormalized nonlinear-mode damping, γ̃ = γ + γ_φ + g²|χ_a|²κ.
    pub fn gamma_renorm(&self) -> f64 {
        let chi2 = self.chi_a().norm_sqr();
        self.gamma_b_total() + self.g * self.g * chi2 * self.kappa
    }

    /// Checks rates and amplitudes for sign and finiteness.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("omega_a", self.omega_a),
            ("omega_b", self.omega_b),
            ("omega_d", self.omega_d),
            ("g", self.g),
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("gamma_phi", self.gamma_phi),
            ("eta", self.eta),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::InvalidParam(format!("{name} is not finite")));
            }
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("gamma_phi", self.gamma_phi),
            ("eta", self.eta),
        ] {
            if v < 0.0 {
                return Err(Error::InvalidParam(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Copy with a different drive amplitude.
    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    /// Copy with the drive frequency set so that Δ_da takes the given value,
    /// leaving the bare mode frequencies untouched.
    pub fn with_delta_da(mut self, delta_da: f64) -> Self {
        self.omega_d = self.omega_a + delta_da;
        self
    }

    /// Copy with the nonlinear mode retuned (flux-swept) so that Δ_db takes
    /// the given value at the current drive frequency.
    pub fn with_delta_db(mut self, delta_db: f64) -> Self {
        self.omega_b = self.omega_d - delta_db;
        self
    }

    /// Drive amplitude from applied power.
    ///
    /// η = √(κ · P/ħω_d) with the power first shifted by a single global dB
    /// offset that absorbs the unknown line attenuation.
    pub fn eta_from_power_dbm(&self, p_dbm: f64, offset_db: f64) -> f64 {
        let p_watts = units::watts_from_dbm(p_dbm + offset_db);
        let flux = units::photon_flux_per_us(p_watts, self.omega_d);
        (self.kappa * flux).sqrt()
    }
}

/// The two measured devices from the experiment's parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Device {
    /// 25-SQUID array: weak nonlinearity.
    A,
    /// 5-SQUID array: ~25x stronger nonlinearity.
    B,
}

impl Device {
    /// Parameter preset for the device, at the standard drive frequency
    /// ω_d/2π = 4.9085 GHz and zero drive amplitude.
    ///
    /// The bare nonlinear-mode loss γ is not available for either device and
    /// defaults to 0; in the explored regimes the nonlinear-mode damping is
    /// dominated by the cavity-mediated term g²|χ_a|²κ. The cavity frequency
    /// follows from the quoted drive frequency and Δ_da/2π = −47.8 MHz.
    pub fn params(self) -> SystemParams {
        let hz = units::rad_per_us_from_hz;
        match self {
            Device::A => SystemParams {
                omega_a: hz(4.9563e9),
                omega_b: hz(4.956806e9),
                omega_d: hz(4.9085e9),
                g: hz(87.6956e6),
                lambda: hz(5.96e3),
                kappa: hz(10.9308e6),
                gamma: 0.0,
                gamma_phi: hz(2.0e3),
                eta: 0.0,
            },
            Device::B => SystemParams {
                omega_a: hz(4.9563e9),
                omega_b: hz(4.951073e9),
                omega_d: hz(4.9085e9),
                g: hz(89.25e6),
                lambda: hz(152.6e3),
                kappa: hz(22.84e6),
                gamma: 0.0,
                gamma_phi: hz(30.0e3),
                eta: 0.0,
            },
        }
    }
}

/// Four-component complex phase-space vector ζ = (α, α†, β, β†).
///
/// Deterministic evolution preserves the conjugate pairing α† = α*, β† = β*.
/// Stochastic (Positive-P) evolution doubles the phase space and may break
/// the pairing, so it is never asserted here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseState {
    /// The raw phase-space vector.
    pub zeta: Vector4<C64>,
}

impl PhaseState {
    /// State with all four components zero.
    pub fn origin() -> Self {
        Self { zeta: Vector4::zeros() }
    }

    /// Conjugate-paired state from classical amplitudes (α, β).
    pub fn from_classical(alpha: C64, beta: C64) -> Self {
        Self { zeta: Vector4::new(alpha, alpha.conj(), beta, beta.conj()) }
    }

    pub fn from_vector(zeta: Vector4<C64>) -> Self {
        Self { zeta }
    }

    pub fn alpha(&self) -> C64 {
        self.zeta[0]
    }

    pub fn alpha_dag(&self) -> C64 {
        self.zeta[1]
    }

    pub fn beta(&self) -> C64 {
        self.zeta[2]
    }

    pub fn beta_dag(&self) -> C64 {
        self.zeta[3]
    }

    /// Distance from the conjugate-paired (classical) manifold.
    pub fn pairing_defect(&self) -> f64 {
        let da = (self.zeta[1] - self.zeta[0].conj()).norm();
        let db = (self.zeta[3] - self.zeta[2].conj()).norm();
        da.max(db)
    }
}
