//! Small dense linear-algebra helpers shared by the filters and the solver.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Clips negative eigenvalues of a symmetric matrix at zero.
pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return sym;
    }
    if sym.nrows() == 1 {
        return DMatrix::from_element(1, 1, sym[(0, 0)].max(0.0));
    }
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&clipped) * v.transpose()))
}

/// Symmetric square root `S` with `S Sᵀ = m`, negative eigenvalues clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if is_diagonal(m) {
        return DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            (0..n).map(|i| m[(i, i)].max(0.0).sqrt()),
        ));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Cholesky factorization of a symmetric positive-definite matrix, adding
/// `1e-9 · trace · I` only when the plain factorization fails.
pub fn regularized_cholesky(s: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(s.clone()) {
        return Ok(c);
    }
    let n = s.nrows();
    let lambda = (1e-9 * s.trace()).max(f64::MIN_POSITIVE);
    let reg = s + DMatrix::identity(n, n) * lambda;
    Cholesky::new(reg).ok_or(Error::SingularInnovation)
}

pub fn check_dims(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
