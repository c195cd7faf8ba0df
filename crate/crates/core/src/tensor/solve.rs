//! Square solves with Rouché–Capelli classification, SVD pseudo-inverse
//! solves, numerical rank, truncated-SVD factorization and exact rank.

use serde::{Deserialize, Serialize};

use super::vector;
use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    NoSolution,
    Unique,
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome<T> {
    pub classification: Classification,
    /// Present for `Unique`; the minimum-norm solution for `Infinite`.
    pub solution: Option<Vec<T>>,
    /// `‖m x − rhs‖∞` for the returned (or least-squares) solution.
    pub residual: T,
    /// σ_max / σ_min of the system matrix.
    pub condition_estimate: T,
}

/// Relative residual tolerance used to accept a solve.
pub fn solver_tolerance<T: Real>() -> T {
    T::epsilon().sqrt()
}

/// Solves the square system `m x = rhs`, classifying it by the numerical ranks
/// of `m` and `[m | rhs]`.
pub fn solve_square<T: Real>(m: &Matrix<T>, rhs: &[T]) -> Result<SolveOutcome<T>> {
    let n = m.rows();
    if !m.is_square() || rhs.len() != n {
        return Err(Error::shape(
            "solve_square",
            format!("{}x{} system with rhs of length {}", m.rows(), m.cols(), rhs.len()),
        ));
    }
    let svd = T::svd(m)?;
    let rank = svd.rank();
    let condition_estimate = svd.condition();

    if rank == n {
        let mut x = lu_solve(m, rhs).unwrap_or_else(|| pinv_from_svd(&svd, rhs));
        let mut residual = residual_inf(m, &x, rhs)?;
        let tol = solver_tolerance::<T>() * (T::one() + vector::max_abs(rhs));
        if residual > tol {
            // one step of iterative refinement
            let r = vector::sub(rhs, &m.matvec(&x)?);
            if let Some(dx) = lu_solve(m, &r) {
                let refined = vector::add(&x, &dx);
                let refined_residual = residual_inf(m, &refined, rhs)?;
                if refined_residual < residual {
                    x = refined;
                    residual = refined_residual;
                }
            }
        }
        return Ok(SolveOutcome {
            classification: Classification::Unique,
            solution: Some(x),
            residual,
            condition_estimate,
        });
    }

    let x = pinv_from_svd(&svd, rhs);
    let residual = residual_inf(m, &x, rhs)?;
    let augmented_rank = numerical_rank(&m.augment(rhs)?)?;
    if augmented_rank > rank {
        Ok(SolveOutcome {
            classification: Classification::NoSolution,
            solution: None,
            residual,
            condition_estimate,
        })
    } else {
        Ok(SolveOutcome {
            classification: Classification::Infinite,
            solution: Some(x),
            residual,
            condition_estimate,
        })
    }
}

/// Solves `m x = rhs` for any shape. Square systems go through
/// [`solve_square`]; rectangular ones are classified by the same rank test
/// against the column count, with the minimum-norm least-squares solution
/// attached unless the system is inconsistent.
pub fn solve_system<T: Real>(m: &Matrix<T>, rhs: &[T]) -> Result<SolveOutcome<T>> {
    if m.is_square() {
        return solve_square(m, rhs);
    }
    if rhs.len() != m.rows() {
        return Err(Error::shape("solve_system", "rhs length differs from rows"));
    }
    let svd = T::svd(m)?;
    let rank = svd.rank();
    let x = pinv_from_svd(&svd, rhs);
    let residual = residual_inf(m, &x, rhs)?;
    let augmented_rank = numerical_rank(&m.augment(rhs)?)?;
    let classification = if augmented_rank > rank {
        Classification::NoSolution
    } else if rank == m.cols() {
        Classification::Unique
    } else {
        Classification::Infinite
    };
    Ok(SolveOutcome {
        classification,
        solution: (classification != Classification::NoSolution).then_some(x),
        residual,
        condition_estimate: svd.condition(),
    })
}

fn residual_inf<T: Real>(m: &Matrix<T>, x: &[T], rhs: &[T]) -> Result<T> {
    Ok(vector::max_abs_diff(&m.matvec(x)?, rhs))
}

/// LU with partial pivoting. `None` when a pivot is exactly zero.
pub fn lu_solve<T: Real>(m: &Matrix<T>, rhs: &[T]) -> Option<Vec<T>> {
    let n = m.rows();
    let mut a = m.data().to_vec();
    let mut b = rhs.to_vec();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| {
            a[i * n + k]
                .abs()
                .partial_cmp(&a[j * n + k].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        if a[p * n + k] == T::zero() || !a[p * n + k].is_finite() {
            return None;
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            b.swap(k, p);
        }
        let pivot = a[k * n + k];
        for i in (k + 1)..n {
            let factor = a[i * n + k] / pivot;
            if factor == T::zero() {
                continue;
            }
            a[i * n + k] = factor;
            for j in (k + 1)..n {
                a[i * n + j] = a[i * n + j] - factor * a[k * n + j];
            }
            b[i] = b[i] - factor * b[k];
        }
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = ((i + 1)..n).fold(b[i], |acc, j| acc - a[i * n + j] * x[j]);
        x[i] = s / a[i * n + i];
    }
    vector::all_finite(&x).then_some(x)
}

fn pinv_from_svd<T: Real>(svd: &super::svd::Svd<T>, rhs: &[T]) -> Vec<T> {
    let tau = svd.threshold();
    let cols = svd.v_t.cols();
    let mut x = vec![T::zero(); cols];
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= tau {
            continue;
        }
        let coeff = (0..svd.u.rows()).fold(T::zero(), |acc, i| acc + svd.u.get(i, k) * rhs[i]) / s;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = *xj + coeff * svd.v_t.get(k, j);
        }
    }
    x
}

/// Minimum-norm least-squares solution of `m x = rhs` through the SVD, with
/// singular values below `max(rows, cols) · σ_max · ε` discarded.
pub fn pinv_solve<T: Real>(m: &Matrix<T>, rhs: &[T]) -> Result<Vec<T>> {
    if rhs.len() != m.rows() {
        return Err(Error::shape("pinv_solve", "rhs length differs from rows"));
    }
    Ok(pinv_from_svd(&T::svd(m)?, rhs))
}

/// Number of singular values above `max(rows, cols) · σ_max · ε`.
pub fn numerical_rank<T: Real>(m: &Matrix<T>) -> Result<usize> {
    Ok(T::svd(m)?.rank())
}

/// Truncated SVD split into `(a, b)` with `a` of shape rows×r and `b` of shape
/// r×cols. The singular values are shared as square roots between the factors.
pub fn svd_factor<T: Real>(m: &Matrix<T>, r: usize) -> Result<(Matrix<T>, Matrix<T>)> {
    if r > m.rows().min(m.cols()) {
        return Err(Error::shape(
            "svd_factor",
            format!("rank {r} exceeds min dimension of {}x{}", m.rows(), m.cols()),
        ));
    }
    let svd = T::svd(m)?;
    let roots: Vec<T> = svd.singular_values[..r].iter().map(|s| s.sqrt()).collect();
    let a = Matrix::from_fn(m.rows(), r, |i, j| svd.u.get(i, j) * roots[j]);
    let b = Matrix::from_fn(r, m.cols(), |i, j| roots[i] * svd.v_t.get(i, j));
    Ok((a, b))
}

/// Rank by Gaussian elimination with exact zero tests. Only meaningful for
/// exact scalar types such as rationals.
pub fn exact_rank<T: Scalar>(m: &Matrix<T>) -> usize {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<T>> = (0..rows).map(|i| m.row(i).to_vec()).collect();
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(rank, p);
        let pivot = a[rank][c].clone();
        for i in (rank + 1)..rows {
            if a[i][c].is_zero() {
                continue;
            }
            let factor = a[i][c].clone() / pivot.clone();
            for j in c..cols {
                let v = a[rank][j].clone();
                a[i][j] = a[i][j].clone() - factor.clone() * v;
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_solve_is_unique() {
        let b = vec![1.0, -2.0, 3.5];
        let out = solve_square(&Matrix::identity(3), &b).unwrap();
        assert_eq!(out.classification, Classification::Unique);
        assert_eq!(out.solution.unwrap(), b);
        assert_eq!(out.residual, 0.0);
    }

    #[test]
    fn zero_matrix_with_nonzero_rhs_has_no_solution() {
        let out = solve_square(&Matrix::<f64>::zeros(2, 2), &[1.0, 0.0]).unwrap();
        assert_eq!(out.classification, Classification::NoSolution);
        assert!(out.solution.is_none());
    }

    #[test]
    fn consistent_rank_one_system_has_infinite_solutions() {
        let out = solve_square(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), &[3.0, 6.0]).unwrap();
        assert_eq!(out.classification, Classification::Infinite);
        let x = out.solution.unwrap();
        assert!((x[0] + 2.0 * x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_rank_one_system() {
        let out = solve_square(&m(&[&[1.0, 2.0], &[2.0, 4.0]]), &[3.0, 7.0]).unwrap();
        assert_eq!(out.classification, Classification::NoSolution);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(solve_square(&Matrix::<f64>::zeros(2, 3), &[0.0, 0.0]).is_err());
    }

    #[test]
    fn pinv_identity_and_zero() {
        let b = vec![0.5, -4.0];
        assert_eq!(pinv_solve(&Matrix::identity(2), &b).unwrap(), b);
        assert_eq!(pinv_solve(&Matrix::<f64>::zeros(2, 2), &b).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn pinv_wide_full_row_rank_is_exact() {
        let a = m(&[&[1.0, 2.0, 0.5, -1.0], &[0.0, 1.0, 3.0, 2.0]]);
        let b = vec![1.0, -2.0];
        let x = pinv_solve(&a, &b).unwrap();
        let r = a.matvec(&x).unwrap();
        assert!(vector::max_abs_diff(&r, &b) <= 1e-10);
        // minimum norm: x lies in the row space, so x = aᵀ y for some y.
        let y = pinv_solve(&a.transpose(), &x).unwrap();
        let back = a.transpose().matvec(&y).unwrap();
        assert!(vector::max_abs_diff(&back, &x) <= 1e-10);
    }

    #[test]
    fn numerical_rank_basics() {
        assert_eq!(numerical_rank(&Matrix::<f64>::identity(5)).unwrap(), 5);
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 4.0, -1.0];
        let outer = Matrix::from_fn(3, 4, |i, j| u[i] * v[j]);
        assert_eq!(numerical_rank(&outer).unwrap(), 1);
        assert_eq!(numerical_rank(&Matrix::<f64>::zeros(3, 3)).unwrap(), 0);
    }

    #[test]
    fn svd_factor_rank_one_and_full() {
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0, 4.0];
        let outer = Matrix::from_fn(3, 3, |i, j| u[i] * v[j]);
        let (a, b) = svd_factor(&outer, 1).unwrap();
        assert_eq!((a.shape(), b.shape()), ((3, 1), (1, 3)));
        assert!(a.matmul(&b).unwrap().sub(&outer).unwrap().frobenius_norm() <= 1e-12);

        let full = m(&[&[1.0, 2.0, 0.0], &[0.5, -1.0, 3.0], &[2.0, 0.0, 1.0]]);
        let (a, b) = svd_factor(&full, 3).unwrap();
        assert!(a.matmul(&b).unwrap().sub(&full).unwrap().frobenius_norm() <= 1e-12);
        assert!(svd_factor(&full, 4).is_err());
    }

    #[test]
    fn exact_rank_on_floats_of_small_integers() {
        assert_eq!(exact_rank(&m(&[&[1.0, 2.0], &[2.0, 4.0]])), 1);
        assert_eq!(exact_rank(&Matrix::<f64>::identity(4)), 4);
        assert_eq!(exact_rank(&Matrix::<f64>::zeros(2, 3)), 0);
    }
}
