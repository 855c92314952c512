//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this are clamped when taking square roots.
pub const EIG_CLAMP: f64 = 1e-12;

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::Config("empty matrix".into()));
    }
    for r in rows {
        if r.len() != d {
            return Err(Error::Config(format!(
                "matrix must be square: row of length {} in a {d}x{d} matrix",
                r.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    SymmetricEigen::new(symmetrized(m))
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= tol * scale
}

/// Returns `(min, max)` eigenvalue of the symmetric part of `m`.
pub fn eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let e = sym_eigen(m);
    let lo = e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Applies `f` to the spectrum: `V f(Λ) Vᵀ`.
pub fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let e = sym_eigen(m);
    let v = &e.eigenvectors;
    let fl = DVector::from_iterator(e.eigenvalues.len(), e.eigenvalues.iter().map(|&l| f(l)));
    let out = v * DMatrix::from_diagonal(&fl) * v.transpose();
    symmetrized(&out)
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(EIG_CLAMP).sqrt())
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| 1.0 / l.max(EIG_CLAMP).sqrt())
}

pub fn sym_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| 1.0 / l.max(EIG_CLAMP))
}

/// Checks symmetry and that the smallest eigenvalue exceeds `EIG_CLAMP`.
pub fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    let (lo, _) = eig_range(m);
    if lo <= EIG_CLAMP {
        return Err(Error::Config(format!(
            "{what} is not positive definite (smallest eigenvalue {lo:e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_sqrt(&m);
        assert!((&s * &s - &m).amax() < 1e-12);
        let is = sym_inv_sqrt(&m);
        assert!((&is * &s - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn spd_check_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(check_spd(&m, "m").is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(check_spd(&m, "m").is_err());
        assert!(check_spd(&DMatrix::identity(3, 3), "m").is_ok());
    }
}
