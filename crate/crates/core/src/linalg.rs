//! Small dense helpers on top of nalgebra used by the Riccati and policy code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

pub fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * lit::<T>(0.5)
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry<T: Real>(m: &DMatrix<T>) -> T {
    if !m.is_square() {
        return T::max_value().unwrap_or_else(|| lit(f64::MAX));
    }
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn eigenvalues<T: Real>(sym: &DMatrix<T>) -> Vec<T> {
    if sym.nrows() == 0 {
        return Vec::new();
    }
    let mut v: Vec<T> = SymmetricEigen::new(symmetrize(sym))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    v
}

pub fn max_eigenvalue<T: Real>(sym: &DMatrix<T>) -> T {
    eigenvalues(sym).last().copied().unwrap_or_else(T::zero)
}

pub fn min_eigenvalue<T: Real>(sym: &DMatrix<T>) -> T {
    eigenvalues(sym).first().copied().unwrap_or_else(T::zero)
}

/// Inverse of a symmetric block expected to be negative definite.
///
/// Tries a Cholesky factorization of `-m` first; when that fails the block is
/// indefinite and an LU inverse is attempted so that forced runs can proceed.
/// Returns the inverse and whether `m` was negative definite.
pub fn inverse_neg_def<T: Real>(
    m: &DMatrix<T>,
    block: &'static str,
    t: T,
) -> Result<(DMatrix<T>, bool)> {
    let neg = -symmetrize(m);
    if let Some(ch) = neg.clone().cholesky() {
        return Ok((-ch.inverse(), true));
    }
    let eig = eigenvalues(m);
    let scale = eig.iter().fold(T::one(), |acc, e| acc.max(e.abs()));
    let tol = scale * lit::<T>(1e-12);
    let singular = eig.iter().any(|e| e.abs() <= tol);
    if !singular {
        if let Some(inv) = symmetrize(m).try_inverse() {
            return Ok((symmetrize(&inv), false));
        }
    }
    Err(Error::Singular {
        block,
        t: to_f64(t),
        eigenvalues: eig.into_iter().map(to_f64).collect(),
    })
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Eigenvalues down to `-1e-10 * max(1, |m|)` are clamped to zero; anything
/// more negative is reported as a moments error.
pub fn sqrt_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig
        .eigenvalues
        .iter()
        .fold(T::one(), |acc, e| acc.max(e.abs()));
    let floor = -scale * lit::<T>(1e-10);
    let mut d = DVector::zeros(n);
    for i in 0..n {
        let e = eig.eigenvalues[i];
        if e < floor {
            return Err(Error::Moments(format!(
                "covariance has negative eigenvalue {}",
                to_f64(e)
            )));
        }
        d[i] = e.max(T::zero()).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(symmetrize(
        &(q * DMatrix::from_diagonal(&d) * q.transpose()),
    ))
}

/// Lower Cholesky factor of a positive definite matrix, falling back to the
/// symmetric square root for semidefinite input.
pub fn factor_psd<T: Real>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    match symmetrize(m).cholesky() {
        Some(ch) => Ok(ch.l()),
        None => sqrt_psd(m),
    }
}

/// `x^T A x` for column vectors.
#[inline]
pub fn quad_form<T: Real>(a: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(a * x))
}

/// `Tr(A B)` without forming the product.
pub fn trace_prod<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> T {
    let mut acc = T::zero();
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn is_finite_mat<T: Real>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn is_finite_vec<T: Real>(v: &DVector<T>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Column vector view of a `d x 1` matrix.
pub fn as_vector<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_iterator(m.nrows() * m.ncols(), m.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_psd_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sqrt_psd(&m).unwrap();
        assert!((&s * &s - &m).amax() < 1e-12);
        assert!(asymmetry(&s) < 1e-14);
    }

    #[test]
    fn sqrt_psd_rejects_negative() {
        let m = DMatrix::from_row_slice(1, 1, &[-1e-3]);
        assert!(matches!(sqrt_psd(&m), Err(Error::Moments(_))));
        let tiny = DMatrix::from_row_slice(1, 1, &[-1e-12]);
        assert_eq!(sqrt_psd(&tiny).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn neg_def_inverse_and_fallback() {
        let u = DMatrix::<f64>::from_row_slice(1, 1, &[-0.5]);
        let (inv, definite) = inverse_neg_def(&u, "U", 0.0).unwrap();
        assert!(definite);
        assert!((inv[(0, 0)] + 2.0).abs() < 1e-15);
        let pos = DMatrix::<f64>::from_row_slice(1, 1, &[2.0]);
        let (inv, definite) = inverse_neg_def(&pos, "U", 0.0).unwrap();
        assert!(!definite);
        assert!((inv[(0, 0)] - 0.5).abs() < 1e-15);
        let zero = DMatrix::<f64>::zeros(1, 1);
        assert!(matches!(
            inverse_neg_def(&zero, "U", 0.3),
            Err(Error::Singular { .. })
        ));
    }
}
