//! Drift vector, Jacobian, and stochastic noise matrices of the two-mode
//! model. Everything else in the crate consumes these.

use nalgebra::{Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::params::{PhaseState, SystemParams};
use crate::C64;

/// Deterministic drift A_c(ζ) of the phase-space equations of motion.
///
/// Component order follows ζ = (α, α†, β, β†). The nonlinear mode carries the
/// full amplitude damping (γ + γ_φ)/2; rows 2 and 4 are the swap-conjugates
/// of rows 1 and 3, so conjugate pairing is preserved exactly.
pub fn drift(state: &PhaseState, p: &SystemParams) -> Vector4<C64> {
    let i = C64::i();
    let z = &state.zeta;
    let (alpha, alpha_dag, beta, beta_dag) = (z[0], z[1], z[2], z[3]);
    let dda = p.delta_da();
    let ddb = p.delta_db();
    let half_kappa = 0.5 * p.kappa;
    let half_gb = 0.5 * p.gamma_b_total();
    let n_b = beta_dag * beta;

    Vector4::new(
        (i * dda - half_kappa) * alpha - i * p.g * beta - i * p.eta,
        (-i * dda - half_kappa) * alpha_dag + i * p.g * beta_dag + i * p.eta,
        (i * ddb - half_gb) * beta + i * p.lambda * n_b * beta - i * p.g * alpha,
        (-i * ddb - half_gb) * beta_dag - i * p.lambda * n_b * beta_dag + i * p.g * alpha_dag,
    )
}

/// Jacobian J_ij = ∂A_c^i/∂ζ_j of the drift at the given state.
pub fn jacobian(state: &PhaseState, p: &SystemParams) -> Matrix4<C64> {
    let i = C64::i();
    let zero = C64::ZERO;
    let beta = state.zeta[2];
    let beta_dag = state.zeta[3];
    let dda = p.delta_da();
    let ddb = p.delta_db();
    let half_kappa = 0.5 * p.kappa;
    let half_gb = 0.5 * p.gamma_b_total();
    let n_b = beta_dag * beta;
    let ig = i * p.g;
    let il = i * p.lambda;

    Matrix4::new(
        i * dda - half_kappa, zero, -ig, zero,
        zero, -i * dda - half_kappa, zero, ig,
        -ig, zero, i * ddb - half_gb + 2.0 * il * n_b, il * beta * beta,
        zero, ig, -il * beta_dag * beta_dag, -i * ddb - half_gb - 2.0 * il * n_b,
    )
}

/// Diffusion matrix D_st of the phase-space Fokker-Planck equation.
///
/// Only the nonlinear-mode block is nonzero:
/// D_β = [[(iΛ−γ_φ)β², γ_φ β†β], [γ_φ β†β, (−iΛ−γ_φ)(β†)²]].
pub fn diffusion_matrix(state: &PhaseState, p: &SystemParams) -> Matrix4<C64> {
    let i = C64::i();
    let beta = state.zeta[2];
    let beta_dag = state.zeta[3];
    let n_b = beta_dag * beta;
    let gp = p.gamma_phi;

    let mut d = Matrix4::zeros();
    d[(2, 2)] = (i * p.lambda - gp) * beta * beta;
    d[(2, 3)] = gp * n_b;
    d[(3, 2)] = gp * n_b;
    d[(3, 3)] = (-i * p.lambda - gp) * beta_dag * beta_dag;
    d
}

/// Factorized noise matrices of the stochastic terms,
/// B_st = √Γ B1 + √γ_φ B2 with B_st B_stᵀ = D_st.
#[derive(Debug, Clone)]
pub struct NoiseDecomposition {
    /// Γ = √(Λ² + γ_φ²).
    pub gamma_big: f64,
    /// Phase defined by Γ e^{iθ} = iΛ − γ_φ (principal argument).
    pub theta: f64,
    /// Nonlinearity-driven noise matrix (lower-left block diag(e^{iθ/2}β, e^{−iθ/2}β†)).
    pub b1: Matrix4<C64>,
    /// Dephasing-driven noise matrix (lower-right block from √(β†β/2)).
    pub b2: Matrix4<C64>,
    /// √γ_φ, kept so `b_st` does not need the params again.
    pub sqrt_gamma_phi: f64,
}

impl NoiseDecomposition {
    /// Combined matrix √Γ B1 + √γ_φ B2.
    pub fn b_st(&self) -> Matrix4<C64> {
        self.b1 * C64::from(self.gamma_big.sqrt()) + self.b2 * C64::from(self.sqrt_gamma_phi)
    }
}

/// Evaluates Γ, θ and the noise matrices B1, B2 at a state.
///
/// The phase θ is the principal argument of iΛ − γ_φ, which makes
/// B_st B_stᵀ = D_st hold entrywise (for Λ > 0, γ_φ → 0 this gives
/// θ → +π/2). √(β†β) uses the principal branch; on the classical manifold
/// β†β = |β|² ≥ 0 so the branch cut is never approached from below.
pub fn noise_matrices(state: &PhaseState, p: &SystemParams) -> NoiseDecomposition {
    let beta = state.zeta[2];
    let beta_dag = state.zeta[3];
    let n_b = beta_dag * beta;

    let w = C64::new(-p.gamma_phi, p.lambda); // iΛ − γ_φ
    let gamma_big = w.norm();
    let theta = if gamma_big > 0.0 { w.arg() } else { 0.0 };

    let half_theta = C64::new(0.0, 0.5 * theta).exp();
    let mut b1 = Matrix4::zeros();
    b1[(2, 0)] = half_theta * beta;
    b1[(3, 1)] = half_theta.conj() * beta_dag;

    let s = (n_b / 2.0).sqrt();
    let e4 = C64::from_polar(1.0, std::f64::consts::FRAC_PI_4);
    let mut b2 = Matrix4::zeros();
    b2[(2, 2)] = s * e4;
    b2[(2, 3)] = s * e4.conj();
    b2[(3, 2)] = s * e4.conj();
    b2[(3, 3)] = s * e4;

    NoiseDecomposition {
        gamma_big,
        theta,
        b1,
        b2,
        sqrt_gamma_phi: p.gamma_phi.sqrt(),
    }
}

/// Scaling transformation Λ → Λ/k, η → √k η, ζ → √k ζ.
///
/// The drift transforms covariantly: drift(ζ', params') = √k · drift(ζ, params)
/// componentwise, so trajectories map onto each other on the same time axis
/// while the stochastic terms pick up a 1/√k prefactor. Values k < 1
/// correspondingly *strengthen* the nonlinearity, which is how expensive
/// weak-noise runs are mapped into a cheaply simulable range.
pub fn scale_transform(
    p: &SystemParams,
    state: &PhaseState,
    k: f64,
) -> Result<(SystemParams, PhaseState)> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::InvalidParam(format!("scale factor k must be > 0, got {k}")));
    }
    let sqrt_k = k.sqrt();
    let mut p2 = *p;
    p2.lambda = p.lambda / k;
    p2.eta = p.eta * sqrt_k;
    let z2 = state.zeta * C64::from(sqrt_k);
    Ok((p2, PhaseState::from_vector(z2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Device;
    use approx::assert_relative_eq;

    fn random_state(seed: u64) -> PhaseState {
        // Small deterministic pseudo-random generator for test states.
        let mut x = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(1);
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x as f64 / u64::MAX as f64) * 8.0 - 4.0
        };
        PhaseState::from_vector(Vector4::new(
            C64::new(next(), next()),
            C64::new(next(), next()),
            C64::new(next(), next()),
            C64::new(next(), next()),
        ))
    }

    #[test]
    fn unforced_equilibrium() {
        let p = Device::A.params();
        let d = drift(&PhaseState::origin(), &p);
        assert_eq!(d, Vector4::zeros());
    }

    #[test]
    fn drive_only_terms_at_origin() {
        let p = Device::A.params().with_eta(3.5);
        let d = drift(&PhaseState::origin(), &p);
        assert_relative_eq!((d[0] + C64::new(0.0, 3.5)).norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!((d[1] - C64::new(0.0, 3.5)).norm(), 0.0, epsilon = 1e-15);
        assert_eq!(d[2], C64::ZERO);
        assert_eq!(d[3], C64::ZERO);
    }

    /// Independently coded evaluation of the drift: linear part assembled as
    /// a matrix, nonlinear and drive parts added as separate vectors.
    fn drift_oracle(state: &PhaseState, p: &SystemParams) -> Vector4<C64> {
        let i = C64::i();
        let zero = C64::ZERO;
        let dda = C64::from(p.delta_da());
        let ddb = C64::from(p.delta_db());
        let hk = C64::from(0.5 * p.kappa);
        let hg = C64::from(0.5 * (p.gamma + p.gamma_phi));
        let g = C64::from(p.g);
        let linear = Matrix4::new(
            i * dda - hk, zero, -i * g, zero,
            zero, -i * dda - hk, zero, i * g,
            -i * g, zero, i * ddb - hg, zero,
            zero, i * g, zero, -i * ddb - hg,
        );
        let b = state.beta();
        let bd = state.beta_dag();
        let kerr = Vector4::new(zero, zero, i * p.lambda * (bd * b) * b, -i * p.lambda * (bd * b) * bd);
        let drive = Vector4::new(-i * p.eta, i * p.eta, zero, zero);
        linear * state.zeta + kerr + drive
    }

    #[test]
    fn drift_matches_independent_evaluation() {
        let p = Device::A.params().with_eta(150.0);
        for seed in 0..25 {
            let z = random_state(seed);
            let d = drift(&z, &p);
            let o = drift_oracle(&z, &p);
            for k in 0..4 {
                assert_relative_eq!(d[k].re, o[k].re, max_relative = 1e-12, epsilon = 1e-12);
                assert_relative_eq!(d[k].im, o[k].im, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = Device::A.params().with_eta(80.0);
        let h = 1e-6;
        for seed in 0..100 {
            let z0 = random_state(seed);
            let j = jacobian(&z0, &p);
            for col in 0..4 {
                // Complex directional derivatives along the real axis of ζ_col.
                let mut zp = z0;
                zp.zeta[col] += C64::from(h);
                let mut zm = z0;
                zm.zeta[col] -= C64::from(h);
                let fd = (drift(&zp, &p) - drift(&zm, &p)) / C64::from(2.0 * h);
                for row in 0..4 {
                    assert!(
                        (fd[row] - j[(row, col)]).norm() < 1e-6,
                        "entry ({row},{col}) mismatch: fd {} vs jac {}",
                        fd[row],
                        j[(row, col)]
                    );
                }
            }
        }
    }

    #[test]
    fn jacobian_nonlinear_entries() {
        let mut p = Device::A.params();
        p.lambda = 0.7;
        let beta = C64::new(1.0, 1.0);
        let z = PhaseState::from_classical(C64::ZERO, beta);
        let j = jacobian(&z, &p);
        // (3,4) entry = iΛβ̄² = iΛ(2i); (4,3) entry = −iΛ(β̄*)² = −iΛ(−2i).
        assert_relative_eq!(
            (j[(2, 3)] - C64::i() * 0.7 * C64::new(0.0, 2.0)).norm(),
            0.0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            (j[(3, 2)] + C64::i() * 0.7 * C64::new(0.0, -2.0)).norm(),
            0.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn jacobian_linear_block_at_zero_beta() {
        let p = Device::A.params();
        let z = PhaseState::from_classical(C64::new(2.0, -1.0), C64::ZERO);
        let j = jacobian(&z, &p);
        assert_eq!(j[(2, 3)], C64::ZERO);
        assert_eq!(j[(3, 2)], C64::ZERO);
        assert_relative_eq!(
            (j[(2, 2)] - C64::new(-0.5 * p.gamma_b_total(), p.delta_db())).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn diffusion_factorization() {
        let mut p = Device::A.params();
        p.lambda = 0.9;
        p.gamma_phi = 0.35;
        for seed in 0..100 {
            let z = random_state(seed);
            let nd = noise_matrices(&z, &p);
            let b = nd.b_st();
            let d = diffusion_matrix(&z, &p);
            let prod = b * b.transpose();
            let scale = d.iter().map(|c| c.norm()).fold(1e-30, f64::max);
            for r in 0..4 {
                for c in 0..4 {
                    assert!(
                        (prod[(r, c)] - d[(r, c)]).norm() <= 1e-10 * scale,
                        "D mismatch at ({r},{c}): {} vs {}",
                        prod[(r, c)],
                        d[(r, c)]
                    );
                }
            }
        }
    }

    #[test]
    fn noise_vanishes_in_deterministic_limit() {
        let mut p = Device::A.params();
        p.lambda = 0.0;
        p.gamma_phi = 0.0;
        let z = random_state(7);
        let nd = noise_matrices(&z, &p);
        assert_eq!(nd.gamma_big, 0.0);
        assert_relative_eq!(nd.b_st().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn theta_limit_without_dephasing() {
        let mut p = Device::A.params();
        p.lambda = 2.0;
        p.gamma_phi = 0.0;
        let nd = noise_matrices(&random_state(3), &p);
        assert_relative_eq!(nd.gamma_big, 2.0, max_relative = 1e-15);
        // Γe^{iθ} = iΛ demands θ = +π/2 on the principal branch.
        assert_relative_eq!(nd.theta, std::f64::consts::FRAC_PI_2, max_relative = 1e-15);
    }

    #[test]
    fn scale_transform_identity_and_covariance() {
        let p = Device::A.params().with_eta(200.0);
        let z = random_state(11);
        let (p1, z1) = scale_transform(&p, &z, 1.0).unwrap();
        assert_eq!(p1, p);
        assert_eq!(z1.zeta, z.zeta);

        for k in [2.0, 4.0, 10.0, 100.0] {
            let (pk, zk) = scale_transform(&p, &z, k).unwrap();
            let lhs = drift(&zk, &pk);
            let rhs = drift(&z, &p) * C64::from(k.sqrt());
            let scale = rhs.iter().map(|c| c.norm()).fold(1e-30, f64::max);
            for i in 0..4 {
                assert!(
                    (lhs[i] - rhs[i]).norm() <= 1e-12 * scale,
                    "k={k}: component {i} {} vs {}",
                    lhs[i],
                    rhs[i]
                );
            }
        }
    }

    #[test]
    fn scale_transform_suppresses_noise() {
        let mut p = Device::A.params().with_eta(200.0);
        p.gamma_phi = 0.0;
        p.lambda = 0.5;
        let z = random_state(5);
        let k = 100.0;
        let (pk, zk) = scale_transform(&p, &z, k).unwrap();
        // With γ_φ = 0 the noise term is √(Λ/k) B1(√k ζ) = √Λ B1(ζ):
        // relative to the √k-larger amplitudes it is suppressed by 1/√k.
        let n0 = noise_matrices(&z, &p);
        let nk = noise_matrices(&zk, &pk);
        let amp0 = (n0.gamma_big.sqrt() * n0.b1.norm()) / z.zeta.norm();
        let ampk = (nk.gamma_big.sqrt() * nk.b1.norm()) / zk.zeta.norm();
        assert_relative_eq!(ampk * k.sqrt(), amp0, max_relative = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_scale() {
        let p = Device::A.params();
        let z = PhaseState::origin();
        assert!(scale_transform(&p, &z, 0.0).is_err());
        assert!(scale_transform(&p, &z, -2.0).is_err());
    }
}
