//! Small dense linear-algebra helpers shared by the model, filter and EM code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SvarError};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Exact repeated product `a^k`; `k = 0` gives the identity.
pub fn matrix_power(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(a.nrows(), a.ncols());
    for _ in 0..k {
        out = &out * a;
    }
    out
}

pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Largest eigenvalue modulus of a square real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol).count()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `log|det a|` via LU; errors when `a` is singular.
pub fn log_abs_det(a: &DMatrix<f64>) -> Result<f64> {
    let det = a.clone().lu().determinant();
    if det == 0.0 || !det.is_finite() {
        return Err(SvarError::numerical("singular matrix in log-determinant"));
    }
    Ok(det.abs().ln())
}

pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| SvarError::numerical("matrix is not invertible"))
}

/// Cholesky factorisation of a symmetric positive definite matrix, returning
/// its inverse and log-determinant.
pub fn spd_inverse_logdet(s: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let chol = s.clone().cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let inv = chol.inverse();
    if !logdet.is_finite() {
        return None;
    }
    Some((inv, logdet))
}

/// Log density of `N(mean, cov)` at `x`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let (inv, logdet) = spd_inverse_logdet(cov)
        .ok_or_else(|| SvarError::numerical("covariance is not positive definite"))?;
    let d = x - mean;
    let quad = d.dot(&(&inv * &d));
    Ok(-0.5 * (x.len() as f64 * LN_2PI + logdet + quad))
}

pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != nc) {
        return Err(SvarError::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Real principal `k`-th root of `m` by the commuting Newton iteration
/// `X <- ((k-1) X + M X^{1-k}) / k` started at a scaled identity. Returns
/// `None` when the iteration does not settle.
pub fn principal_root(m: &DMatrix<f64>, k: usize) -> Option<DMatrix<f64>> {
    if k == 1 {
        return Some(m.clone());
    }
    let n = m.nrows();
    let rho = spectral_radius(m);
    if rho == 0.0 || !rho.is_finite() {
        return None;
    }
    let mut x = DMatrix::identity(n, n) * rho.powf(1.0 / k as f64);
    let kf = k as f64;
    for _ in 0..200 {
        let xinv = x.clone().try_inverse()?;
        let next = (&x * (kf - 1.0) + m * matrix_power(&xinv, k - 1)) / kf;
        let delta = max_abs(&(&next - &x));
        x = next;
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if delta < 1e-12 * (1.0 + max_abs(&x)) {
            let resid = max_abs(&(matrix_power(&x, k) - m));
            return (resid < 1e-8 * (1.0 + max_abs(m))).then_some(x);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_edge_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.5, 0.0, -0.8]);
        assert_eq!(matrix_power(&a, 0), DMatrix::identity(2, 2));
        assert_eq!(matrix_power(&a, 1), a);
        let a2 = matrix_power(&a, 2);
        let expect = DMatrix::from_row_slice(2, 2, &[0.64, 0.0, 0.0, 0.64]);
        assert!(max_abs(&(a2 - expect)) < 1e-15);
    }

    #[test]
    fn kron_shape_and_values() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let i = DMatrix::<f64>::identity(2, 2);
        let k = kron(&i, &a);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(2, 3)], 2.0);
        assert_eq!(k[(0, 2)], 0.0);
    }

    #[test]
    fn logsumexp_stable() {
        let v = [1000.0, 1000.0];
        assert!((logsumexp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
    }

    #[test]
    fn root_inverts_power() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.7]);
        let m = matrix_power(&a, 3);
        let r = principal_root(&m, 3).unwrap();
        assert!(max_abs(&(r - a)) < 1e-8);
    }

    #[test]
    fn lcm_gcd() {
        assert_eq!(lcm(2, 3), 6);
        assert_eq!(lcm(2, 4), 4);
        assert_eq!(gcd(4, 6), 2);
    }
}
