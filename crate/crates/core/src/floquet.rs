//! Floquet eigensystem of the linearized dynamics around a closed limit
//! cycle, and the phase-diffusion estimate of the comb coherence time.
//!
//! The variational matrix R(t) with R(0) = I is integrated over one period;
//! K = R(T) is the fundamental matrix. Its eigenvalues are the Floquet
//! multipliers ρ_i = e^{μ_i T}; right/left eigenvectors b_i, c_i generate
//! the periodic eigenvectors p_i(t) = e^{−μ_i t} R(t) b_i and
//! q_i†(t) = e^{μ_i t} c_i† R(t)⁻¹. On a stable cycle exactly one exponent
//! vanishes; its eigenvector is the tangential velocity, and noise projected
//! onto it diffuses the free phase of the comb.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::LimitCycle;
use crate::error::{Error, Result};
use crate::linalg::eig4;
use crate::model::{drift, noise_matrices};
use crate::ode::{self, OdeOpts};
use crate::params::{PhaseState, SystemParams};
use crate::C64;

/// Orbit closure required before Floquet analysis is meaningful.
pub const CLOSURE_TOL: f64 = 1e-8;

/// Fundamental matrix of the linearized flow around a limit cycle, with the
/// variational matrix sampled over one period.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix {
    /// K = R(T).
    pub k: Matrix4<C64>,
    /// Orbit period.
    pub period: f64,
    /// Uniform sample times over [0, T] (inclusive of both ends).
    pub t_samples: Vec<f64>,
    /// R(t) at the sample times.
    pub r_samples: Vec<Matrix4<C64>>,
    /// Orbit states ζ_c(t) at the sample times.
    pub zeta_samples: Vec<Vector4<C64>>,
}

/// Integrates Ṙ = J(t)R over one period of the refined orbit, storing
/// `n_samples` + 1 uniform samples of (ζ_c, R).
pub fn fundamental_matrix(
    lc: &LimitCycle,
    p: &SystemParams,
    n_samples: usize,
) -> Result<FundamentalMatrix> {
    if lc.closure > CLOSURE_TOL {
        return Err(Error::ClosureFail { closure: lc.closure, tol: CLOSURE_TOL });
    }
    if n_samples < 16 {
        return Err(Error::InvalidParam("need at least 16 samples per period".into()));
    }
    let opts = OdeOpts { rtol: 1e-12, atol: 1e-12, divergence_norm: None, ..OdeOpts::default() };
    let sample_dt = lc.period / n_samples as f64;

    // Same combined (ζ, R) layout as the shooting refinement.
    let mut y0 = nalgebra::SVector::<C64, 20>::zeros();
    for i in 0..4 {
        y0[i] = lc.state.zeta[i];
    }
    for c in 0..4 {
        y0[4 + 4 * c + c] = C64::from(1.0);
    }
    let f = |_t: f64, y: &nalgebra::SVector<C64, 20>| {
        let zeta = Vector4::new(y[0], y[1], y[2], y[3]);
        let state = PhaseState::from_vector(zeta);
        let a = drift(&state, p);
        let j = crate::model::jacobian(&state, p);
        let mut r = Matrix4::<C64>::zeros();
        for c in 0..4 {
            for row in 0..4 {
                r[(row, c)] = y[4 + 4 * c + row];
            }
        }
        let jr = j * r;
        let mut out = nalgebra::SVector::<C64, 20>::zeros();
        for i in 0..4 {
            out[i] = a[i];
        }
        for c in 0..4 {
            for row in 0..4 {
                out[4 + 4 * c + row] = jr[(row, c)];
            }
        }
        out
    };

    let mut t_samples = Vec::with_capacity(n_samples + 1);
    let mut r_samples = Vec::with_capacity(n_samples + 1);
    let mut zeta_samples = Vec::with_capacity(n_samples + 1);
    ode::integrate_sampled(&f, 0.0, y0, lc.period, sample_dt, &opts, |_, t, y| {
        let mut r = Matrix4::zeros();
        for c in 0..4 {
            for row in 0..4 {
                r[(row, c)] = y[4 + 4 * c + row];
            }
        }
        t_samples.push(t);
        r_samples.push(r);
        zeta_samples.push(Vector4::new(y[0], y[1], y[2], y[3]));
    })?;

    let k = *r_samples.last().expect("period sampling produced no samples");
    Ok(FundamentalMatrix { k, period: lc.period, t_samples, r_samples, zeta_samples })
}

/// Full Floquet eigensystem with periodic left/right eigenvectors sampled
/// over one period.
#[derive(Debug, Clone)]
pub struct FloquetSystem {
    /// Orbit period (µs).
    pub period: f64,
    /// Fundamental matrix K = R(T).
    pub k: Matrix4<C64>,
    /// Multipliers ρ_i; index 0 is the phase mode (closest to 1).
    pub multipliers: [C64; 4],
    /// Exponents μ_i = log(ρ_i)/T on the principal branch.
    pub exponents: [C64; 4],
    /// Sample times over [0, T].
    pub t_samples: Vec<f64>,
    /// Right eigenvectors p_i(t) as matrix columns per sample.
    pub p_samples: Vec<Matrix4<C64>>,
    /// Left eigenvectors q_i†(t) as matrix rows per sample.
    pub q_samples: Vec<Matrix4<C64>>,
    /// Orbit states ζ_c(t).
    pub zeta_samples: Vec<Vector4<C64>>,
    /// Velocity v(t) = A_c(ζ_c(t)).
    pub v_samples: Vec<Vector4<C64>>,
    /// Root-mean-square speed over the period.
    pub v_t: f64,
    /// Largest ‖Q(t)P(t) − I‖ over the samples.
    pub biorthonormality_residual: f64,
    /// Largest angle between p_0(t) and v(t) (radians).
    pub p0_velocity_angle: f64,
}

impl FloquetSystem {
    /// Count of exponents with |μ|·T below the given bound.
    pub fn near_zero_exponents(&self, bound: f64) -> usize {
        self.exponents.iter().filter(|mu| mu.norm() * self.period < bound).count()
    }
}

/// Builds the Floquet eigensystem from the fundamental matrix.
///
/// Left/right eigenvectors of K are normalized to c_j†b_i = δ_ij; the phase
/// mode (multiplier closest to 1) is rescaled so that q_0†(t)·v(t) equals
/// the rms speed v_T.
pub fn floquet_eigensystem(fm: &FundamentalMatrix, p: &SystemParams) -> Result<FloquetSystem> {
    let eig = eig4(&fm.k, 1e-8)?;

    // Order modes: phase mode first, then descending |ρ|.
    let t = fm.period;
    let mut order: Vec<usize> = (0..4).collect();
    let i0 = (0..4)
        .min_by(|&a, &b| {
            (eig.values[a] - C64::from(1.0))
                .norm()
                .total_cmp(&(eig.values[b] - C64::from(1.0)).norm())
        })
        .unwrap();
    order.retain(|&i| i != i0);
    order.sort_by(|&a, &b| eig.values[b].norm().total_cmp(&eig.values[a].norm()));
    order.insert(0, i0);

    let mut multipliers = [C64::ZERO; 4];
    let mut b = Matrix4::<C64>::zeros();
    for (slot, &i) in order.iter().enumerate() {
        multipliers[slot] = eig.values[i];
        b.set_column(slot, &eig.right.column(i));
    }
    // Left rows from inversion keep biorthonormality at machine precision.
    let mut c = b.try_inverse().ok_or(Error::EigenFailure { residual: f64::INFINITY })?;

    let mut exponents = [C64::ZERO; 4];
    for i in 0..4 {
        exponents[i] = multipliers[i].ln() / t;
    }

    // Velocity samples and rms speed (periodic mean over [0, T)).
    let n = fm.t_samples.len() - 1;
    let v_samples: Vec<Vector4<C64>> =
        fm.zeta_samples.iter().map(|z| drift(&PhaseState::from_vector(*z), p)).collect();
    let v_t = (v_samples[..n].iter().map(|v| v.norm_squared()).sum::<f64>() / n as f64).sqrt();

    // `c` rows already act as covectors by plain dot product (rows of B⁻¹),
    // i.e. their entries are the conjugated components of the left
    // eigenvectors. All q-row algebra below is therefore conjugation-free.
    //
    // Rescale the phase mode so q0†(0) v(0) = v_T; the Floquet structure
    // carries the normalization around the orbit.
    let s: C64 = c.row(0).iter().zip(v_samples[0].iter()).map(|(ci, vi)| ci * vi).sum();
    if s.norm() == 0.0 {
        return Err(Error::EigenFailure { residual: 0.0 });
    }
    let scale = C64::from(v_t) / s;
    for col in 0..4 {
        c[(0, col)] *= scale;
    }
    let b0 = b.column(0) / scale;
    b.set_column(0, &b0.into_owned());

    // Periodic eigenvectors at the sample times.
    let mut p_samples = Vec::with_capacity(fm.t_samples.len());
    let mut q_samples = Vec::with_capacity(fm.t_samples.len());
    let mut biorth = 0.0f64;
    let mut angle_max = 0.0f64;
    for (k_idx, &tk) in fm.t_samples.iter().enumerate() {
        let r = &fm.r_samples[k_idx];
        let r_inv = r.try_inverse().ok_or(Error::EigenFailure { residual: f64::INFINITY })?;
        let mut pk = Matrix4::<C64>::zeros();
        let mut qk = Matrix4::<C64>::zeros();
        for i in 0..4 {
            let phase_p = (-exponents[i] * tk).exp();
            let col = r * b.column(i) * phase_p;
            pk.set_column(i, &col);
            // q_i†(t) = e^{μ_i t} c_i† R⁻¹(t): plain row-times-matrix.
            let phase_q = (exponents[i] * tk).exp();
            let row = c.row(i) * r_inv * phase_q;
            qk.set_row(i, &row);
        }
        // Biorthonormality: q_j†(t) p_i(t) = δ_ij, i.e. Q·P = I.
        let resid = (qk * pk - Matrix4::identity()).norm();
        biorth = biorth.max(resid);

        let p0 = pk.column(0);
        let v = &v_samples[k_idx];
        let dot: C64 = p0.iter().zip(v.iter()).map(|(a, w)| a.conj() * w).sum();
        let cosang = (dot.norm() / (p0.norm() * v.norm())).min(1.0);
        angle_max = angle_max.max(cosang.acos());

        p_samples.push(pk);
        q_samples.push(qk);
    }

    Ok(FloquetSystem {
        period: t,
        k: fm.k,
        multipliers,
        exponents,
        t_samples: fm.t_samples.clone(),
        p_samples,
        q_samples,
        zeta_samples: fm.zeta_samples.clone(),
        v_samples,
        v_t,
        biorthonormality_residual: biorth,
        p0_velocity_angle: angle_max,
    })
}

/// Phase-diffusion summary of a limit cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseDiffusion {
    /// Effective limit-cycle radius r_eff = v_T/Δ (amplitude units).
    pub r_eff: f64,
    /// RMS projected noise per √time, δn = √(T⁻¹∫⟨n²⟩dt).
    pub delta_n: f64,
    /// Coherence time 2(r_eff/δn)² (µs); +inf with noise off.
    pub t_coh: f64,
    /// RMS fraction of the projection living in the imaginary part; the
    /// variance definition treats the Wiener channels as independent real
    /// processes, so a large value here flags that reading for scrutiny.
    pub imag_fraction: f64,
    /// RMS tangential speed.
    pub v_t: f64,
    /// Comb angular spacing 2π/T (rad/µs).
    pub spacing: f64,
}

/// Projects the stochastic terms onto the phase mode and assembles the
/// coherence-time estimate T_coh = 2(r_eff/δn)².
pub fn phase_diffusion(fs: &FloquetSystem, p: &SystemParams) -> PhaseDiffusion {
    let n = fs.t_samples.len() - 1; // periodic mean over [0, T)
    let mut sum_var = 0.0;
    let mut sum_im = 0.0;
    let mut sum_abs = 0.0;
    for k in 0..n {
        let state = PhaseState::from_vector(fs.zeta_samples[k]);
        let nd = noise_matrices(&state, p);
        // Channel variances: Γ‖q0†B1‖² + γφ‖q0†B2‖², channel-wise. The
        // stored q rows act by plain dot product.
        for (mat, weight) in [(&nd.b1, nd.gamma_big), (&nd.b2, p.gamma_phi)] {
            for ch in 0..4 {
                let w: C64 = (0..4).map(|r| fs.q_samples[k][(0, r)] * mat[(r, ch)]).sum();
                let contrib = weight * w.norm_sqr();
                sum_var += contrib;
                sum_abs += contrib;
                sum_im += weight * w.im * w.im;
            }
        }
    }
    let delta_n = (sum_var / n as f64).sqrt();
    let spacing = 2.0 * std::f64::consts::PI / fs.period;
    let r_eff = fs.v_t / spacing;
    let t_coh = if delta_n > 0.0 { 2.0 * (r_eff / delta_n).powi(2) } else { f64::INFINITY };
    let imag_fraction = if sum_abs > 0.0 { (sum_im / sum_abs).sqrt() } else { 0.0 };
    PhaseDiffusion { r_eff, delta_n, t_coh, imag_fraction, v_t: fs.v_t, spacing }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eigenvalues4, expm4};
    use crate::model::jacobian;
    use crate::params::Device;
    use crate::units::rad_per_us_from_hz;
    use approx::assert_relative_eq;

    /// A fixed point treated as a trivial "orbit" gives a constant-J system.
    fn constant_j_setup() -> (SystemParams, PhaseState, f64) {
        let p = Device::A
            .params()
            .with_delta_da(rad_per_us_from_hz(-47.8e6))
            .with_delta_db(rad_per_us_from_hz(25.2e6));
        let eta = p.eta_from_power_dbm(-90.0, 0.0);
        let p = p.with_eta(eta);
        let sol = crate::steady::steady_states(&p).unwrap();
        let fp = &sol.fixed_points[0];
        (p, PhaseState::from_classical(fp.alpha, fp.beta), 0.004)
    }

    #[test]
    fn constant_j_fundamental_matrix_is_matrix_exponential() {
        let (p, z, t) = constant_j_setup();
        let lc = LimitCycle { state: z, period: t, closure: 0.0 };
        let fm = fundamental_matrix(&lc, &p, 32).unwrap();
        let j = jacobian(&z, &p);
        let expect = expm4(&(j * C64::from(t)));
        let err = (fm.k - expect).norm() / expect.norm();
        assert!(err < 1e-8, "relative deviation {err}");
    }

    #[test]
    fn determinant_identity() {
        // tr J = −κ − (γ+γφ) identically, so det K = exp(−(κ+γ+γφ)T).
        let (p, z, t) = constant_j_setup();
        let lc = LimitCycle { state: z, period: t, closure: 0.0 };
        let fm = fundamental_matrix(&lc, &p, 32).unwrap();
        let det = fm.k.determinant();
        let expect = (-(p.kappa + p.gamma_b_total()) * t).exp();
        assert_relative_eq!(det.re, expect, max_relative = 1e-6);
        assert!(det.im.abs() < 1e-6 * expect);
    }

    #[test]
    fn constant_j_exponents_match_eigenvalues() {
        let (p, z, t) = constant_j_setup();
        let lc = LimitCycle { state: z, period: t, closure: 0.0 };
        let fm = fundamental_matrix(&lc, &p, 32).unwrap();
        let fs = floquet_eigensystem(&fm, &p).unwrap();
        let expect: Vec<C64> = eigenvalues4(&jacobian(&z, &p)).to_vec();
        let mut got: Vec<C64> = fs.exponents.to_vec();
        // Period chosen small enough that no exponent aliases; match each
        // eigenvalue to its closest exponent.
        for e in &expect {
            let (idx, dist) = got
                .iter()
                .enumerate()
                .map(|(i, g)| (i, (e - g).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            assert!(dist < 1e-6 * (1.0 + e.norm()), "{e} unmatched (closest {})", got[idx]);
            got.remove(idx);
        }
        assert!(fs.biorthonormality_residual < 1e-8, "biorth {}", fs.biorthonormality_residual);
    }

    #[test]
    fn noise_off_means_infinite_coherence() {
        let (mut p, z, t) = constant_j_setup();
        p.lambda = 0.0;
        p.gamma_phi = 0.0;
        let lc = LimitCycle { state: z, period: t, closure: 0.0 };
        let fm = fundamental_matrix(&lc, &p, 32).unwrap();
        let fs = floquet_eigensystem(&fm, &p).unwrap();
        let pd = phase_diffusion(&fs, &p);
        assert_eq!(pd.delta_n, 0.0);
        assert!(pd.t_coh.is_infinite());
    }
}
