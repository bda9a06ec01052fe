//! Small dense complex linear algebra helpers: eigensystem of a 4×4 complex
//! matrix and a Padé matrix exponential.
//!
//! The systems handled by this crate are fixed-size (4 phase-space components,
//! 8 ringdown moments), so a characteristic-polynomial route with
//! Durand–Kerner root finding plus inverse iteration is both simple and
//! accurate to near machine precision for the well-separated spectra that
//! occur here.

use nalgebra::{DMatrix, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::C64;

/// Eigenvalues and (optionally) left/right eigenvectors of a 4×4 complex
/// matrix.
#[derive(Debug, Clone)]
pub struct Eig4 {
    /// Eigenvalues, in the order used by the eigenvector columns/rows.
    pub values: [C64; 4],
    /// Right eigenvectors as columns: M·b_i = λ_i·b_i.
    pub right: Matrix4<C64>,
    /// Left eigenvectors as rows of this matrix: row_i·M = λ_i·row_i,
    /// normalized so that left * right = I.
    pub left: Matrix4<C64>,
}

/// Coefficients (c3, c2, c1, c0) of the monic characteristic polynomial
/// λ⁴ + c3λ³ + c2λ² + c1λ + c0 via Newton's identities on trace powers.
fn char_poly(m: &Matrix4<C64>) -> [C64; 4] {
    let m2 = m * m;
    let m3 = m2 * m;
    let m4 = m3 * m;
    let p1 = m.trace();
    let p2 = m2.trace();
    let p3 = m3.trace();
    let p4 = m4.trace();
    let e1 = p1;
    let e2 = (e1 * p1 - p2) / 2.0;
    let e3 = (e2 * p1 - e1 * p2 + p3) / 3.0;
    let e4 = (e3 * p1 - e2 * p2 + e1 * p3 - p4) / 4.0;
    [-e1, e2, -e3, e4]
}

fn poly_eval(c: &[C64; 4], z: C64) -> C64 {
    ((z + c[0]) * z + c[1]) * z * z + c[2] * z + c[3]
}

fn poly_deriv(c: &[C64; 4], z: C64) -> C64 {
    ((4.0 * z + 3.0 * c[0]) * z + 2.0 * c[1]) * z + c[2]
}

/// All four roots of the monic quartic by Durand–Kerner iteration with a
/// Newton polish.
fn quartic_roots(c: &[C64; 4]) -> [C64; 4] {
    // Cauchy bound keeps the start circle outside all roots.
    let bound = 1.0 + c.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let seed = C64::new(0.4, 0.9);
    let mut z = [seed, seed * seed, seed * seed * seed, seed * seed * seed * seed];
    for zi in z.iter_mut() {
        *zi *= C64::from(bound) / zi.norm();
    }
    for _ in 0..200 {
        let mut max_step = 0.0f64;
        for i in 0..4 {
            let mut denom = C64::new(1.0, 0.0);
            for j in 0..4 {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = poly_eval(c, z[i]) / denom;
            z[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step < 1e-15 * bound {
            break;
        }
    }
    for zi in z.iter_mut() {
        for _ in 0..3 {
            let d = poly_deriv(c, *zi);
            if d.norm() > 1e-300 {
                let step = poly_eval(c, *zi) / d;
                if step.norm() < 1e-6 * bound {
                    *zi -= step;
                }
            }
        }
    }
    z
}

/// Eigenvalues only.
pub fn eigenvalues4(m: &Matrix4<C64>) -> [C64; 4] {
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return [C64::ZERO; 4];
    }
    let ms = m / C64::from(scale);
    let c = char_poly(&ms);
    let mut roots = quartic_roots(&c);
    for r in roots.iter_mut() {
        *r *= scale;
    }
    roots
}

/// Full eigensystem with biorthonormal left/right vectors.
///
/// Fails with [`Error::Degenerate`] when two eigenvalues are closer than
/// `degeneracy_tol` relative to the matrix scale, and with
/// [`Error::EigenFailure`] when inverse iteration does not produce an
/// eigenvector residual below 1e-8 (defective matrix).
pub fn eig4(m: &Matrix4<C64>, degeneracy_tol: f64) -> Result<Eig4> {
    let scale = m.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::EigenFailure { residual: 0.0 });
    }
    let values = eigenvalues4(m);
    let val_scale = values.iter().map(|c| c.norm()).fold(scale * 1e-3, f64::max);
    for i in 0..4 {
        for j in (i + 1)..4 {
            let spacing = (values[i] - values[j]).norm();
            if spacing < degeneracy_tol.max(1e-7) * val_scale {
                return Err(Error::Degenerate { spacing });
            }
        }
    }
    // Clustered roots blur the root finder faster than the pairwise check
    // can see (a quadruple root is only located to ~eps^(1/4)); the
    // characteristic-polynomial derivative catches those.
    {
        let ms = m / C64::from(scale);
        let c = char_poly(&ms);
        for &v in &values {
            let dp = poly_deriv(&c, v / scale).norm();
            if dp < 1e-10 {
                return Err(Error::Degenerate { spacing: dp * scale });
            }
        }
    }

    let mut right = Matrix4::zeros();
    for (i, &lam) in values.iter().enumerate() {
        let v = inverse_iteration(m, lam, scale)?;
        right.set_column(i, &v);
    }
    let left = right
        .try_inverse()
        .ok_or(Error::EigenFailure { residual: f64::INFINITY })?;
    Ok(Eig4 { values, right, left })
}

fn inverse_iteration(m: &Matrix4<C64>, lam: C64, scale: f64) -> Result<Vector4<C64>> {
    // A slightly complex-shifted target keeps the shifted matrix invertible.
    let shifts = [1e-12, 1e-10, 1e-8, 1e-6];
    for &rel in &shifts {
        let shifted = m - Matrix4::identity() * (lam + C64::new(rel * scale, rel * scale));
        let lu = shifted.lu();
        let mut v = Vector4::new(
            C64::new(1.0, 0.3),
            C64::new(-0.7, 0.9),
            C64::new(0.4, -1.1),
            C64::new(0.9, 0.5),
        );
        v /= C64::from(v.norm());
        let mut ok = false;
        for _ in 0..4 {
            match lu.solve(&v) {
                Some(w) => {
                    let n = w.norm();
                    if !n.is_finite() || n == 0.0 {
                        break;
                    }
                    v = w / C64::from(n);
                    ok = true;
                }
                None => break,
            }
        }
        if ok {
            let residual = (m * v - v * lam).norm();
            if residual <= 1e-8 * scale {
                // Deterministic phase: largest-modulus component real positive.
                let (idx, _) = v
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                    .unwrap();
                let phase = v[idx] / v[idx].norm();
                v /= phase;
                return Ok(v);
            }
        }
    }
    let residual = {
        let shifted = m - Matrix4::identity() * lam;
        shifted.norm()
    };
    Err(Error::EigenFailure { residual })
}

/// Matrix exponential by scaling-and-squaring with a 13th-order Padé
/// approximant.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm requires a square matrix");
    let norm = a.iter().map(|c| c.norm()).fold(0.0, f64::max) * n as f64;
    let s = if norm > 0.5 {
        ((norm / 0.5).log2().ceil() as i32).max(0)
    } else {
        0
    };
    let a_scaled = a / C64::from(2f64.powi(s));

    // Padé 13 coefficients.
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];

    let id = DMatrix::<C64>::identity(n, n);
    let a2 = &a_scaled * &a_scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * C64::from(B[13]) + &a4 * C64::from(B[11]) + &a2 * C64::from(B[9]);
    let u = &a_scaled
        * (&a6 * u_inner
            + &a6 * C64::from(B[7])
            + &a4 * C64::from(B[5])
            + &a2 * C64::from(B[3])
            + &id * C64::from(B[1]));
    let v_inner = &a6 * C64::from(B[12]) + &a4 * C64::from(B[10]) + &a2 * C64::from(B[8]);
    let v = &a6 * v_inner
        + &a6 * C64::from(B[6])
        + &a4 * C64::from(B[4])
        + &a2 * C64::from(B[2])
        + &id * C64::from(B[0]);

    let denom = (&v - &u).lu();
    let mut r = denom.solve(&(&v + &u)).expect("Pade denominator singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Convenience: exponential of a 4×4 complex matrix.
pub fn expm4(a: &Matrix4<C64>) -> Matrix4<C64> {
    let d = DMatrix::from_fn(4, 4, |i, j| a[(i, j)]);
    let e = expm(&d);
    Matrix4::from_fn(|i, j| e[(i, j)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn test_matrix(seed: u64) -> Matrix4<C64> {
        let mut x = seed.wrapping_mul(0x2545F4914F6CDD1D).wrapping_add(7);
        let mut next = move || {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x as f64 / u64::MAX as f64) * 4.0 - 2.0
        };
        Matrix4::from_fn(|_, _| C64::new(next(), next()))
    }

    #[test]
    fn eigenvalues_match_trace_and_det() {
        for seed in 1..40 {
            let m = test_matrix(seed);
            let vals = eigenvalues4(&m);
            let sum: C64 = vals.iter().sum();
            let prod: C64 = vals.iter().product();
            assert_relative_eq!((sum - m.trace()).norm(), 0.0, epsilon = 1e-9 * m.norm());
            assert_relative_eq!(
                (prod - m.determinant()).norm() / m.determinant().norm().max(1e-12),
                0.0,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn eigenvectors_satisfy_residual_and_biorthonormality() {
        for seed in 1..40 {
            let m = test_matrix(seed);
            let e = match eig4(&m, 1e-10) {
                Ok(e) => e,
                Err(Error::Degenerate { .. }) => continue,
                Err(other) => panic!("unexpected failure: {other}"),
            };
            let scale = m.norm();
            for i in 0..4 {
                let b = e.right.column(i);
                let r = (m * b - b * e.values[i]).norm();
                assert!(r < 1e-8 * scale, "right residual {r}");
                let c = e.left.row(i);
                let rl = (c * m - c * e.values[i]).norm();
                assert!(rl < 1e-6 * scale, "left residual {rl}");
            }
            let prod = e.left * e.right;
            assert_relative_eq!((prod - Matrix4::identity()).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn diagonal_matrix_eigensystem() {
        let m = Matrix4::from_diagonal(&Vector4::new(
            C64::new(1.0, 2.0),
            C64::new(-3.0, 0.5),
            C64::new(0.25, -4.0),
            C64::new(2.0, 2.0),
        ));
        let e = eig4(&m, 1e-10).unwrap();
        let mut vals: Vec<C64> = e.values.to_vec();
        vals.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert_relative_eq!((vals[0] - C64::new(-3.0, 0.5)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_spectrum_is_reported() {
        let m = Matrix4::identity() * C64::new(2.0, 1.0);
        assert!(matches!(eig4(&m, 1e-8), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn expm_of_diagonal() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(0.3, -1.2),
            C64::new(-2.0, 0.7),
            C64::new(1.5, 3.0),
        ]));
        let e = expm(&d);
        for i in 0..3 {
            assert_relative_eq!((e[(i, i)] - d[(i, i)].exp()).norm(), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn expm_matches_series_for_small_matrix() {
        let m = test_matrix(9) * C64::from(0.05);
        let d = DMatrix::from_fn(4, 4, |i, j| m[(i, j)]);
        let e = expm(&d);
        // Taylor series reference.
        let mut term = DMatrix::<C64>::identity(4, 4);
        let mut sum = DMatrix::<C64>::identity(4, 4);
        for k in 1..30 {
            term = (&term * &d) / C64::from(k as f64);
            sum += &term;
        }
        assert_relative_eq!((e - sum).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn expm_group_property() {
        let m = test_matrix(21);
        let d = DMatrix::from_fn(4, 4, |i, j| m[(i, j)]);
        let e1 = expm(&d);
        let e2 = expm(&(&d * C64::from(2.0)));
        assert_relative_eq!((&e1 * &e1 - &e2).norm() / e2.norm(), 0.0, epsilon = 1e-11);
    }
}
