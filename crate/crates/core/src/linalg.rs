//! Small dense helpers. Matrices are row-major `Vec<f64>` of size `d * d`.

use nalgebra::{DMatrix, SymmetricEigen};

pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn to_dmatrix(d: usize, m: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, m)
}

pub fn from_dmatrix(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Inverse and log-determinant of a symmetric matrix through its
/// eigendecomposition, with eigenvalues floored at [`EIGEN_FLOOR`].
pub fn sym_inverse_logdet(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR));
    let logdet = vals.iter().map(|v| v.ln()).sum();
    let inv_diag = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v));
    let q = &eig.eigenvectors;
    (q * inv_diag * q.transpose(), logdet)
}

/// Principal square root of a symmetric positive semi-definite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    let q = &eig.eigenvectors;
    q * root * q.transpose()
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    let d = m.nrows();
    let symmetric = (0..d).all(|i| {
        (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * (1.0 + m[(i, j)].abs()))
    });
    symmetric && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

#[inline]
pub fn matvec(d: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(d) {
        *o = m[i * d..(i + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// `m^T v` for a row-major square matrix.
#[inline]
pub fn matvec_t(d: usize, m: &[f64], v: &[f64], out: &mut [f64]) {
    out[..d].iter_mut().for_each(|o| *o = 0.0);
    for (i, vi) in v.iter().enumerate().take(d) {
        for (o, a) in out.iter_mut().zip(&m[i * d..(i + 1) * d]) {
            *o += a * vi;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_spd() {
        let m = to_dmatrix(2, &[2.0, 0.5, 0.5, 1.0]);
        let (inv, logdet) = sym_inverse_logdet(&m);
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-14);
        assert!((logdet - 1.75f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = to_dmatrix(2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sym_sqrt(&m);
        assert!((&r * &r - m).abs().max() < 1e-12);
    }

    #[test]
    fn spd_check() {
        assert!(is_spd(&to_dmatrix(2, &[1.0, 0.0, 0.0, 1e-4])));
        assert!(!is_spd(&to_dmatrix(2, &[1.0, 2.0, 2.0, 1.0])));
        assert!(!is_spd(&to_dmatrix(2, &[1.0, 0.1, 0.0, 1.0])));
    }

    #[test]
    fn lse_is_stable() {
        assert!((log_sum_exp(&[1000.0, 0.0]) - 1000.0).abs() < 1e-12);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn transposed_product() {
        let m = [1.0, 2.0, 3.0, 4.0];
        let mut o = [0.0; 2];
        matvec_t(2, &m, &[1.0, 1.0], &mut o);
        assert_eq!(o, [4.0, 6.0]);
        matvec(2, &m, &[1.0, 1.0], &mut o);
        assert_eq!(o, [3.0, 7.0]);
    }
}
