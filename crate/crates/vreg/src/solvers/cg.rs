//! Conjugate gradients for symmetric positive-definite systems.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Solve `A x = b` for symmetric positive-definite `A` given as a matvec.
///
/// Stops when `||Ax - b|| <= tol * ||b||`. A direction of nonpositive
/// curvature aborts with [`Error::IndefiniteOperator`], signaling a
/// non-minimizing lower-level point to bilevel callers.
pub fn cg_solve<T: Scalar>(
    matvec: impl Fn(&Tensor<T>) -> Result<Tensor<T>>,
    b: &Tensor<T>,
    tol: f64,
    max_iter: usize,
) -> Result<Tensor<T>> {
    let bnorm = b.norm();
    if bnorm == T::zero() {
        return Ok(Tensor::zeros(b.shape()));
    }
    let stop = T::of(tol) * bnorm;

    let mut x = Tensor::zeros(b.shape());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.norm_sq();

    for it in 0..max_iter {
        if rs.sqrt() <= stop {
            break;
        }
        let ap = matvec(&p)?;
        let p_ap = p.dot(&ap)?;
        if p_ap <= T::zero() {
            return Err(Error::IndefiniteOperator {
                curvature: p_ap.as_f64(),
                iteration: it,
            });
        }
        let alpha = rs / p_ap;
        x = x.axpy(alpha, &p)?;
        r = r.axpy(-alpha, &ap)?;
        let rs_new = r.norm_sq();
        let beta = rs_new / rs;
        p = r.axpy(beta, &p)?;
        rs = rs_new;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sample_gaussian, Rng};

    #[test]
    fn identity_system_solves_in_one_step() {
        let b = Tensor::from_vec(vec![1.0f64, -2.0, 3.0]);
        let x = cg_solve(|v| Ok(v.clone()), &b, 1e-12, 1).unwrap();
        assert_eq!(x.data(), b.data());
    }

    #[test]
    fn diagonal_system() {
        let b = Tensor::from_vec(vec![2.0f64, 1.0]);
        let x = cg_solve(
            |v| {
                Ok(Tensor::from_vec(vec![
                    2.0 * v.data()[0],
                    1.0 * v.data()[1],
                ]))
            },
            &b,
            1e-12,
            10,
        )
        .unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-10);
        assert!((x.data()[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn negative_curvature_is_reported() {
        let b = Tensor::from_vec(vec![1.0f64]);
        let err = cg_solve(|v| Ok(v.scale(-1.0)), &b, 1e-10, 5).unwrap_err();
        assert!(matches!(err, Error::IndefiniteOperator { .. }));
    }

    /// Dense SPD system (A^T A + I) against a Gaussian-elimination oracle,
    /// with a residual-monotonicity check in the A-norm.
    #[test]
    fn random_spd_matches_dense_solve() {
        let n = 50;
        let mut rng = Rng::new(21);
        let raw = sample_gaussian::<f64>(&mut rng, &[n * n], 1.0);
        // A = M^T M + I
        let mut a = vec![vec![0.0f64; n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += raw.data()[k * n + i] * raw.data()[k * n + j];
                }
                a[i][j] = acc / n as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        let b = sample_gaussian::<f64>(&mut rng, &[n], 1.0);

        let na = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
        let nb = nalgebra::DVector::from_iterator(n, b.data().iter().copied());
        let oracle = na.clone().lu().solve(&nb).unwrap();

        let matvec = |v: &Tensor<f64>| {
            let mut out = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[i][j] * v.data()[j];
                }
                out[i] = acc;
            }
            Ok(Tensor::from_vec(out))
        };

        // track the error in the A-norm across restarts of increasing budget
        let mut last = f64::INFINITY;
        for iters in [5, 15, 40, 80] {
            let x = cg_solve(matvec, &b, 0.0, iters).unwrap();
            let mut e_norm = 0.0;
            for i in 0..n {
                let ei = x.data()[i] - oracle[i];
                for j in 0..n {
                    e_norm += ei * a[i][j] * (x.data()[j] - oracle[j]);
                }
            }
            assert!(e_norm <= last * (1.0 + 1e-12), "A-norm error grew: {e_norm} > {last}");
            last = e_norm;
        }

        let x = cg_solve(matvec, &b, 1e-10, 500).unwrap();
        for i in 0..n {
            assert!((x.data()[i] - oracle[i]).abs() < 1e-8);
        }
    }
}
