//! Run configuration: a single TOML file with laboratory units (Hz, dBm,
//! µs), validated before any compute starts.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kerrcomb::units::rad_per_us_from_hz;
use kerrcomb::{Device, SystemParams};

fn default_one() -> f64 {
    1.0
}

/// Top-level configuration. Any section may be omitted; defaults target
/// Device A at the comb operating cut.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub lyapunov: LyapunovConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub floquet: FloquetConfig,
    #[serde(default)]
    pub tcoh: TcohConfig,
    #[serde(default)]
    pub kerr: KerrConfig,
    #[serde(default)]
    pub ringdown: RingdownConfig,
}

/// Either a device preset or a fully explicit parameter set (exactly one).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    /// "A" or "B".
    pub preset: Option<String>,
    /// Explicit parameters (all frequencies/rates in Hz).
    pub explicit: Option<ExplicitParams>,
    /// Optional overrides applied after the preset (Hz).
    #[serde(default)]
    pub override_: OverrideParams,
    /// Global dB offset applied to every drive power.
    #[serde(default)]
    pub drive_offset_db: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            preset: Some("A".into()),
            explicit: None,
            override_: OverrideParams::default(),
            drive_offset_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitParams {
    pub omega_a_hz: f64,
    pub omega_b_hz: f64,
    pub omega_d_hz: f64,
    pub g_hz: f64,
    pub lambda_hz: f64,
    pub kappa_hz: f64,
    pub gamma_hz: f64,
    pub gamma_phi_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverrideParams {
    pub omega_a_hz: Option<f64>,
    pub omega_b_hz: Option<f64>,
    pub omega_d_hz: Option<f64>,
    pub gamma_hz: Option<f64>,
    pub gamma_phi_hz: Option<f64>,
    pub delta_da_hz: Option<f64>,
    pub delta_db_hz: Option<f64>,
}

impl Default for OverrideParams {
    fn default() -> Self {
        Self {
            omega_a_hz: None,
            omega_b_hz: None,
            omega_d_hz: None,
            gamma_hz: None,
            gamma_phi_hz: None,
            delta_da_hz: None,
            // The comb operating cut: the nonlinear mode flux-tuned so the
            // drive sits 25.2 MHz above it. Any explicit [system.override]
            // section replaces this wholesale.
            delta_db_hz: Some(25.2e6),
        }
    }
}

impl SystemConfig {
    /// Resolved internal-unit parameters (η = 0).
    pub fn params(&self) -> Result<SystemParams> {
        let mut p = match (&self.preset, &self.explicit) {
            (Some(name), None) => match name.as_str() {
                "A" | "a" => Device::A.params(),
                "B" | "b" => Device::B.params(),
                other => bail!("unknown preset {other:?} (expected \"A\" or \"B\")"),
            },
            (None, Some(e)) => SystemParams {
                omega_a: rad_per_us_from_hz(e.omega_a_hz),
                omega_b: rad_per_us_from_hz(e.omega_b_hz),
                omega_d: rad_per_us_from_hz(e.omega_d_hz),
                g: rad_per_us_from_hz(e.g_hz),
                lambda: rad_per_us_from_hz(e.lambda_hz),
                kappa: rad_per_us_from_hz(e.kappa_hz),
                gamma: rad_per_us_from_hz(e.gamma_hz),
                gamma_phi: rad_per_us_from_hz(e.gamma_phi_hz),
                eta: 0.0,
            },
            (Some(_), Some(_)) => bail!("system: set exactly one of preset/explicit, got both"),
            (None, None) => bail!("system: set exactly one of preset/explicit, got neither"),
        };
        let o = &self.override_;
        if let Some(v) = o.omega_a_hz {
            p.omega_a = rad_per_us_from_hz(v);
        }
        if let Some(v) = o.omega_b_hz {
            p.omega_b = rad_per_us_from_hz(v);
        }
        if let Some(v) = o.omega_d_hz {
            p.omega_d = rad_per_us_from_hz(v);
        }
        if let Some(v) = o.gamma_hz {
            p.gamma = rad_per_us_from_hz(v);
        }
        if let Some(v) = o.gamma_phi_hz {
            p.gamma_phi = rad_per_us_from_hz(v);
        }
        if let Some(v) = o.delta_da_hz {
            p = p.with_delta_da(rad_per_us_from_hz(v));
        }
        if let Some(v) = o.delta_db_hz {
            p = p.with_delta_db(rad_per_us_from_hz(v));
        }
        p.validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;
        Ok(p)
    }
}

/// Inclusive linear axis.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        kerrcomb::steady::linspace(self.min, self.max, self.n)
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.n == 0 {
            bail!("{name}: axis needs n >= 1");
        }
        if self.n > 1 && !(self.max > self.min) {
            bail!("{name}: degenerate axis range [{}, {}]", self.min, self.max);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub power_dbm: Axis,
    pub delta_da_hz: Axis,
    pub delta_db_hz: Axis,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            power_dbm: Axis { min: -132.0, max: -67.0, n: 66 },
            delta_da_hz: Axis { min: -250.0e6, max: 250.0e6, n: 51 },
            delta_db_hz: Axis { min: -80.0e6, max: 60.0e6, n: 57 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Drive powers to record spectra at.
    pub powers_dbm: Vec<f64>,
    pub settle_us: f64,
    pub record_us: f64,
    pub tol: f64,
    pub sample_dt_us: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            powers_dbm: vec![-76.0, -74.0, -72.0],
            settle_us: 4.0,
            record_us: 8.0,
            tol: 1e-10,
            sample_dt_us: 2.0e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyapunovConfig {
    /// 0 selects the default 5/κ.
    pub delta_tau_us: f64,
    pub n_iterates: usize,
    pub transient_us: f64,
    pub tol: f64,
    /// Grid: powers × Δ_db at the configured Δ_da.
    pub power_dbm: Axis,
    pub delta_db_hz: Axis,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            delta_tau_us: 0.0,
            n_iterates: 400,
            transient_us: 3.0,
            tol: 1e-9,
            power_dbm: Axis { min: -76.0, max: -64.0, n: 7 },
            delta_db_hz: Axis { min: -90.0e6, max: 30.0e6, n: 25 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeConfig {
    pub n_traj: usize,
    /// 0 selects 0.04 / fastest rate.
    pub dt_us: f64,
    pub t_ss_us: f64,
    pub t_window_us: f64,
    pub t_corr_us: f64,
    /// 0 selects ~2 ns retained-sample spacing.
    pub sample_every: usize,
    pub batch_size: usize,
    pub steadiness_check: bool,
    pub seed: u64,
    /// Nonlinearity scaling applied before the run (scale_transform).
    #[serde(default = "default_one")]
    pub scale_k: f64,
    pub power_dbm: f64,
    /// Dephasing override for the run (Hz); negative keeps the preset.
    pub gamma_phi_hz: f64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            n_traj: 2048,
            dt_us: 0.0,
            t_ss_us: 0.4,
            t_window_us: 0.75,
            t_corr_us: 0.58,
            sample_every: 0,
            batch_size: 64,
            steadiness_check: false,
            seed: 1,
            scale_k: 0.01,
            power_dbm: -74.0,
            gamma_phi_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub f_if_hz: f64,
    pub bandwidth_hz: f64,
    pub sample_period_us: f64,
    pub f_sideband_hz: Option<f64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let d = kerrcomb::coherence::FilterSpec::default();
        Self {
            f_if_hz: d.f_if_hz,
            bandwidth_hz: d.bandwidth_hz,
            sample_period_us: d.sample_period_us,
            f_sideband_hz: None,
        }
    }
}

impl FilterConfig {
    pub fn spec(&self) -> kerrcomb::coherence::FilterSpec {
        kerrcomb::coherence::FilterSpec {
            f_if_hz: self.f_if_hz,
            bandwidth_hz: self.bandwidth_hz,
            sample_period_us: self.sample_period_us,
            f_sideband_hz: self.f_sideband_hz,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FloquetConfig {
    pub powers_dbm: Vec<f64>,
    pub settle_us: f64,
    pub n_samples: usize,
    pub closure_tol: f64,
}

impl Default for FloquetConfig {
    fn default() -> Self {
        Self {
            powers_dbm: vec![-75.0, -74.0, -73.0, -72.0],
            settle_us: 4.0,
            n_samples: 256,
            closure_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcohConfig {
    /// Nonlinearity multipliers; each is simulated via the scaled protocol.
    pub lambda_scales: Vec<f64>,
    /// Fixed dephasing entering every run, in units of the scaled Λ metrics
    /// (Hz, applied after scaling).
    pub gamma_phi_hz: f64,
    pub power_dbm: f64,
    /// Fit the coherence law to the sweep.
    pub fit_law: bool,
}

impl Default for TcohConfig {
    fn default() -> Self {
        Self {
            lambda_scales: vec![12.0, 18.0, 27.0, 40.0],
            gamma_phi_hz: 8.0e3,
            power_dbm: -74.0,
            fit_law: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KerrConfig {
    /// Bare-mode detunings in units of g.
    pub delta_ab_over_g: Vec<f64>,
    pub pump_power_watts: f64,
    pub pump_detuning_linewidths: f64,
    /// Relative noise injected into the synthetic measured points.
    pub noise_rel: f64,
    pub noise_seed: u64,
}

impl Default for KerrConfig {
    fn default() -> Self {
        Self {
            delta_ab_over_g: vec![20.0, 14.0, 10.0, 7.0, 5.0, 3.5, 2.5, 1.8],
            pump_power_watts: 1e-15,
            pump_detuning_linewidths: 5.0,
            noise_rel: 0.015,
            noise_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingdownConfig {
    pub delta_ab_over_g: f64,
    pub drive_us: f64,
    pub ring_us: f64,
    pub sample_dt_us: f64,
    pub gamma_phi_hz: f64,
    pub eta: f64,
}

impl Default for RingdownConfig {
    fn default() -> Self {
        Self {
            delta_ab_over_g: 14.0,
            drive_us: 1.2,
            ring_us: 0.55,
            sample_dt_us: 2.0e-4,
            gamma_phi_hz: 50.0e3,
            eta: 30.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        let cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.system.params().context("system")?;
        self.sweep.power_dbm.validate("sweep.power_dbm")?;
        self.sweep.delta_da_hz.validate("sweep.delta_da_hz")?;
        self.sweep.delta_db_hz.validate("sweep.delta_db_hz")?;
        self.lyapunov.power_dbm.validate("lyapunov.power_dbm")?;
        self.lyapunov.delta_db_hz.validate("lyapunov.delta_db_hz")?;
        if self.sde.n_traj == 0 {
            bail!("sde.n_traj must be >= 1");
        }
        if !(self.sde.scale_k > 0.0) {
            bail!("sde.scale_k must be > 0");
        }
        if self.spectrum.powers_dbm.is_empty() {
            bail!("spectrum.powers_dbm must be nonempty");
        }
        if self.filter.bandwidth_hz <= 0.0 {
            bail!("filter.bandwidth_hz must be > 0");
        }
        Ok(())
    }
}
