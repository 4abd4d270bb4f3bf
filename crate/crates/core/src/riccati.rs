//! Continuous algebraic Riccati and Lyapunov equations for small dense systems.

use nalgebra::DMatrix;

use crate::error::{Result, VshpError};

const SIGN_MAX_ITER: usize = 100;
const NEWTON_MAX_ITER: usize = 50;

/// Residual `A'X + XA - X B R^-1 B' X + Q` of the control-form CARE.
pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| VshpError::Config("Riccati weight R is singular".into()))?;
    Ok(a.transpose() * x + x * a - x * b * r_inv * b.transpose() * x + q)
}

/// Solves `A'X + XA - X B R^-1 B' X + Q = 0` for the stabilizing `X`.
///
/// The Hamiltonian matrix sign function gives a first solution which is then
/// refined by Newton-Kleinman iterations.
pub fn care(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(VshpError::Config(
            "Riccati matrices have inconsistent dimensions".into(),
        ));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| VshpError::Config("Riccati weight R is singular".into()))?;
    let s = b * &r_inv * b.transpose();

    let mut ham = DMatrix::<f64>::zeros(2 * n, 2 * n);
    ham.view_mut((0, 0), (n, n)).copy_from(a);
    ham.view_mut((0, n), (n, n)).copy_from(&(-&s));
    ham.view_mut((n, 0), (n, n)).copy_from(&(-q));
    ham.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let sign = matrix_sign(ham)?;
    // [W12; W22 + I] X = -[W11 + I; W21]
    let mut lhs = DMatrix::<f64>::zeros(2 * n, n);
    let mut rhs = DMatrix::<f64>::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&sign.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(sign.view((n, n), (n, n)) + DMatrix::<f64>::identity(n, n)));
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(sign.view((0, 0), (n, n)) + DMatrix::<f64>::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-sign.view((n, 0), (n, n))));
    let normal = lhs.transpose() * &lhs;
    let mut x = normal.lu().solve(&(lhs.transpose() * rhs)).ok_or_else(|| {
        VshpError::Config("Hamiltonian has eigenvalues on the imaginary axis (pair not stabilizable/detectable)".into())
    })?;
    x = (&x + x.transpose()) * 0.5;

    // Newton-Kleinman refinement
    let scale = 1.0 + q.amax() + x.amax();
    let mut best = x.clone();
    let mut best_res = care_residual(a, b, q, r, &x)?.amax();
    for _ in 0..NEWTON_MAX_ITER {
        if best_res <= 1e-14 * scale {
            break;
        }
        let k = &r_inv * b.transpose() * &x;
        let a_cl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let next = match lyapunov(&a_cl, &rhs) {
            Ok(v) => (&v + v.transpose()) * 0.5,
            Err(_) => break,
        };
        let res = care_residual(a, b, q, r, &next)?.amax();
        x = next;
        if res < best_res {
            best_res = res;
            best = x.clone();
        } else {
            break;
        }
    }

    let k = &r_inv * b.transpose() * &best;
    if !is_hurwitz(&(a - b * k)) {
        return Err(VshpError::Config(
            "Riccati solution is not stabilizing (pair not stabilizable/detectable)".into(),
        ));
    }
    if best_res > 1e-8 * scale {
        return Err(VshpError::NonConvergence {
            method: "Riccati",
            iterations: NEWTON_MAX_ITER,
            residual: best_res,
        });
    }
    Ok(best)
}

fn matrix_sign(mut z: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = z.nrows() as f64;
    for iter in 0..SIGN_MAX_ITER {
        let lu = z.clone().lu();
        let det = lu.determinant();
        let inv = lu
            .try_inverse()
            .filter(|_| det.is_finite() && det != 0.0)
            .ok_or_else(|| {
                VshpError::Config(
                    "Hamiltonian has eigenvalues on the imaginary axis (pair not stabilizable/detectable)".into(),
                )
            })?;
        let c = det.abs().powf(1.0 / dim);
        let next = (&z / c + inv * c) * 0.5;
        let change = (&next - &z).amax() / (1.0 + next.amax());
        z = next;
        if change <= 1e-14 {
            return Ok(z);
        }
        if iter + 1 == SIGN_MAX_ITER {
            return Err(VshpError::NonConvergence {
                method: "matrix sign function",
                iterations: SIGN_MAX_ITER,
                residual: change,
            });
        }
    }
    Ok(z)
}

/// Solves `A'X + XA + M = 0` by Kronecker vectorization.
pub fn lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let at = a.transpose();
    let mut big = DMatrix::<f64>::zeros(n * n, n * n);
    // vec(A'X) = (I kron A') vec X ; vec(XA) = (A' kron I) vec X (column-major vec)
    for j in 0..n {
        for i in 0..n {
            let row = j * n + i;
            for k in 0..n {
                big[(row, j * n + k)] += at[(i, k)];
                big[(row, k * n + i)] += a[(k, j)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(n * n, (-m).iter().copied());
    let sol = big
        .lu()
        .solve(&rhs)
        .ok_or_else(|| VshpError::Config("Lyapunov operator is singular".into()))?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |m, e| m.max(e.re))
}

pub fn is_hurwitz(a: &DMatrix<f64>) -> bool {
    spectral_abscissa(a) < 0.0
}
