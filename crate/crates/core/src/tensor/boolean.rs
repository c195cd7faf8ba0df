//! Boolean matrices and the Boolean determinant.
//!
//! The Boolean determinant is defined by expansion along the first column,
//! `det(B) = max_i B[i,0] · det(B without row i and column 0)`. It is 1 exactly
//! when some permutation σ has `B[σ(j), j] = 1` for every column `j`, i.e. when
//! the bipartite row/column support graph has a perfect matching.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest size for which [`boolean_det`] uses the memoized recursion.
pub const RECURSION_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BoolMatrix {
    pub fn new(rows: usize, cols: usize, bits: Vec<bool>) -> Result<Self> {
        if rows * cols != bits.len() {
            return Err(Error::shape("BoolMatrix::new", "bit count differs from shape"));
        }
        Ok(BoolMatrix { rows, cols, bits })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                bits.push(f(i, j));
            }
        }
        BoolMatrix { rows, cols, bits }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        BoolMatrix {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        BoolMatrix::from_fn(n, n, |i, j| i == j)
    }

    /// Converts a numeric matrix whose entries are all exactly 0 or 1.
    pub fn try_from_matrix<T: Scalar>(m: &Matrix<T>) -> Result<Self> {
        let mut bits = Vec::with_capacity(m.data().len());
        for (idx, v) in m.data().iter().enumerate() {
            if v.is_zero() {
                bits.push(false);
            } else if v.is_one() {
                bits.push(true);
            } else {
                return Err(Error::NonBoolean {
                    row: idx / m.cols(),
                    col: idx % m.cols(),
                });
            }
        }
        Ok(BoolMatrix {
            rows: m.rows(),
            cols: m.cols(),
            bits,
        })
    }

    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            if self.get(i, j) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.bits[i * self.cols + j] = v;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }

    pub fn has_zero_row(&self) -> bool {
        (0..self.rows).any(|i| (0..self.cols).all(|j| !self.get(i, j)))
    }

    pub fn has_zero_col(&self) -> bool {
        (0..self.cols).any(|j| (0..self.rows).all(|i| !self.get(i, j)))
    }

    /// Entrywise OR.
    pub fn or(&self, other: &BoolMatrix) -> Result<BoolMatrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::shape("BoolMatrix::or", "shape mismatch"));
        }
        Ok(BoolMatrix {
            rows: self.rows,
            cols: self.cols,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| a | b).collect(),
        })
    }

    /// Khatri-Rao product over the {0, 1} semiring (AND for products).
    pub fn khatri_rao(&self, other: &BoolMatrix) -> Result<BoolMatrix> {
        if self.cols != other.cols {
            return Err(Error::shape("BoolMatrix::khatri_rao", "column count mismatch"));
        }
        let br = other.rows;
        Ok(BoolMatrix::from_fn(self.rows * br, self.cols, |i, j| {
            self.get(i / br, j) && other.get(i % br, j)
        }))
    }
}

/// Boolean determinant of a numeric 0/1 matrix.
pub fn boolean_det<T: Scalar>(b: &Matrix<T>) -> Result<bool> {
    boolean_det_bits(&BoolMatrix::try_from_matrix(b)?)
}

/// Boolean determinant, by memoized first-column recursion for small sizes
/// and by bipartite matching above [`RECURSION_LIMIT`].
pub fn boolean_det_bits(b: &BoolMatrix) -> Result<bool> {
    if b.rows() <= RECURSION_LIMIT {
        boolean_det_recursive(b)
    } else {
        boolean_det_matching(b)
    }
}

fn require_square(b: &BoolMatrix, op: &'static str) -> Result<()> {
    if b.rows != b.cols {
        return Err(Error::shape(op, format!("{}x{} is not square", b.rows, b.cols)));
    }
    Ok(())
}

/// First-column expansion with memoization over the set of deleted rows.
/// After `c` expansions the remaining minor is fully described by which `c`
/// rows were removed, so there are at most `2^n` distinct minors.
pub fn boolean_det_recursive(b: &BoolMatrix) -> Result<bool> {
    require_square(b, "boolean_det_recursive")?;
    let n = b.rows;
    if n == 0 {
        return Ok(true);
    }
    if n > 63 {
        return Err(Error::shape(
            "boolean_det_recursive",
            format!("{n}x{n} exceeds the 63-row memo key"),
        ));
    }
    fn expand(b: &BoolMatrix, col: usize, removed: u64, memo: &mut HashMap<u64, bool>) -> bool {
        if col == b.rows {
            return true;
        }
        if let Some(&v) = memo.get(&removed) {
            return v;
        }
        let value = (0..b.rows).any(|i| {
            removed & (1 << i) == 0 && b.get(i, col) && expand(b, col + 1, removed | (1 << i), memo)
        });
        memo.insert(removed, value);
        value
    }
    Ok(expand(b, 0, 0, &mut HashMap::new()))
}

/// Perfect-matching test on the row/column support graph (augmenting paths).
pub fn boolean_det_matching(b: &BoolMatrix) -> Result<bool> {
    require_square(b, "boolean_det_matching")?;
    let n = b.rows;
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&i| b.get(i, j)).collect())
        .collect();
    let mut row_match: Vec<Option<usize>> = vec![None; n];

    fn augment(
        col: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        row_match: &mut [Option<usize>],
    ) -> bool {
        for &row in &adj[col] {
            if seen[row] {
                continue;
            }
            seen[row] = true;
            let free = match row_match[row] {
                None => true,
                Some(other) => augment(other, adj, seen, row_match),
            };
            if free {
                row_match[row] = Some(col);
                return true;
            }
        }
        false
    }

    for col in 0..n {
        let mut seen = vec![false; n];
        if !augment(col, &adj, &mut seen, &mut row_match) {
            return Ok(false);
        }
    }
    Ok(true)
}
