//! Kronecker, Khatri-Rao and Hadamard products.

use super::{Matrix, DEFAULT_SIZE_CAP};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check_cap(op: &'static str, rows: usize, cols: usize, cap: usize) -> Result<()> {
    match rows.checked_mul(cols) {
        Some(n) if n <= cap => Ok(()),
        _ => Err(Error::DimensionOverflow {
            op,
            rows,
            cols,
            cap,
        }),
    }
}

/// Kronecker product with the default size cap.
pub fn kron<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    kron_capped(a, b, DEFAULT_SIZE_CAP)
}

/// Block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron_capped<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, cap: usize) -> Result<Matrix<T>> {
    let rows = a.rows().saturating_mul(b.rows());
    let cols = a.cols().saturating_mul(b.cols());
    check_cap("kron", rows, cols, cap)?;
    let (br, bc) = b.shape();
    Ok(Matrix::from_fn(rows, cols, |i, j| {
        a.get(i / br, j / bc) * b.get(i % br, j % bc)
    }))
}

/// Column-wise Kronecker product with the default size cap.
pub fn khatri_rao<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    khatri_rao_capped(a, b, DEFAULT_SIZE_CAP)
}

/// Column `j` of the result is `kron(a[:, j], b[:, j])`; row `i * b.rows + l`
/// holds `a[i, j] * b[l, j]`.
pub fn khatri_rao_capped<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, cap: usize) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "khatri_rao",
            format!("{} columns vs {} columns", a.cols(), b.cols()),
        ));
    }
    let rows = a.rows().saturating_mul(b.rows());
    check_cap("khatri_rao", rows, a.cols(), cap)?;
    let br = b.rows();
    Ok(Matrix::from_fn(rows, a.cols(), |i, j| {
        a.get(i / br, j) * b.get(i % br, j)
    }))
}

/// Entrywise product.
pub fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    a.zip_with("hadamard", b, |x, y| x * y)
}
