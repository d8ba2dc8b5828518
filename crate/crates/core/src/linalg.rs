//! Small dense and banded linear-algebra helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (so `lower[0]` is unused) and
/// `upper[i]` multiplies `x[i+1]` (`upper[n-1]` unused).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(lower.len() == n && upper.len() == n && rhs.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let scale = diag.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut denom = diag[0];
    if denom.abs() <= 1e-300 * scale {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() <= 1e-14 * scale {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

pub fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::invalid(format!("{name} must be non-empty")));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::invalid(format!("{name} must be square: row {i} has {} entries, expected {n}", r.len())));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{name} has a non-finite entry in row {i}")));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Symmetrizes `m`, rejecting asymmetry above `1e-12` relative to the
/// largest entry. Smaller asymmetry is averaged away.
pub fn symmetrize(m: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::invalid(format!(
            "{name} must be symmetric (max |A - A^T| = {asym:e} relative {:.3e})",
            asym / scale
        )));
    }
    Ok((m + m.transpose()) * 0.5)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Spectral square root of a symmetric positive semi-definite matrix.
/// Eigenvalues in `[-1e-10 * max, 0)` are clamped to zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-10 * top {
            return Err(Error::invalid(format!("matrix square root of an indefinite matrix (eigenvalue {v:e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense_solve() {
        let n = 6;
        let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -1.0 + 0.1 * i as f64 }).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i + 1 == n { 0.0 } else { -0.7 }).collect();
        let diag = vec![3.0; n];
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag[i]
            } else if j + 1 == i {
                lower[i]
            } else if i + 1 == j {
                upper[i]
            } else {
                0.0
            }
        });
        let dense = a.lu().solve(&nalgebra::DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - dense[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let r = solve_tridiagonal(&[0.0, 1.0], &[1.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::SingularSystem { row: 1 })));
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = sqrt_psd(&m).unwrap();
        assert!((&r * &r - &m).amax() < 1e-14);
    }

    #[test]
    fn asymmetry_threshold() {
        let ok = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-14, 1.0]);
        assert!(symmetrize(&ok, "A").is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.6, 1.0]);
        assert!(symmetrize(&bad, "A").is_err());
    }
}
