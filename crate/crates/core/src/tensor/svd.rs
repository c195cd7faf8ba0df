//! Thin SVD and the quantities derived from it.

use faer::traits::RealField;
use faer::Mat;

use super::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `m = u * diag(singular_values) * v_t` with `k = min(rows, cols)` and the
/// singular values in descending order.
#[derive(Debug, Clone)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub singular_values: Vec<T>,
    pub v_t: Matrix<T>,
}

impl<T: Real> Svd<T> {
    pub fn sigma_max(&self) -> T {
        self.singular_values.first().copied().unwrap_or_else(T::zero)
    }

    /// Singular values at or below this count as zero.
    pub fn threshold(&self) -> T {
        let dim = self.u.rows().max(self.v_t.cols());
        T::lit(dim as f64) * self.sigma_max() * T::epsilon()
    }

    pub fn rank(&self) -> usize {
        let tau = self.threshold();
        self.singular_values.iter().filter(|&&s| s > tau).count()
    }

    /// σ_max / σ_min over all `min(rows, cols)` values; infinite when σ_min is 0.
    pub fn condition(&self) -> T {
        match self.singular_values.last() {
            None => T::zero(),
            Some(&s) if s > T::zero() => self.sigma_max() / s,
            Some(_) => T::infinity(),
        }
    }
}

pub(crate) fn svd_faer<T: Real + RealField>(m: &Matrix<T>) -> Result<Svd<T>> {
    let (rows, cols) = m.shape();
    if !m.is_finite() {
        return Err(Error::SvdNoConvergence);
    }
    if rows == 0 || cols == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v_t: Matrix::zeros(0, cols),
        });
    }
    let fm = Mat::from_fn(rows, cols, |i, j| m.get(i, j));
    let svd = fm.thin_svd().map_err(|_| Error::SvdNoConvergence)?;
    let (u, v) = (svd.U(), svd.V());
    let k = rows.min(cols);
    Ok(Svd {
        u: Matrix::from_fn(rows, k, |i, j| u[(i, j)]),
        singular_values: svd.S().column_vector().iter().copied().collect(),
        v_t: Matrix::from_fn(k, cols, |i, j| v[(j, i)]),
    })
}

#[cfg(test)]
mod tests {
    use crate::rng::{seeded_rng, WeightDist};
    use crate::scalar::Real;
    use crate::tensor::Matrix;

    fn recompose(s: &super::Svd<f64>) -> Matrix<f64> {
        s.u.scale_cols(&s.singular_values).unwrap().matmul(&s.v_t).unwrap()
    }

    #[test]
    fn recomposes_rank_deficient_products() {
        let mut rng = seeded_rng(6);
        for (n, r) in [(4, 1), (5, 2), (8, 3), (6, 6)] {
            let a: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, n, r);
            let b: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, r, n);
            let m = a.matmul(&b).unwrap();
            let s = f64::svd(&m).unwrap();
            assert!(recompose(&s).sub(&m).unwrap().frobenius_norm() < 1e-12);
            assert_eq!(s.rank(), r);
            assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rectangular_and_empty_shapes() {
        let mut rng = seeded_rng(1);
        for (rows, cols) in [(3, 7), (7, 3), (1, 5)] {
            let m: Matrix<f64> = WeightDist::StandardNormal.matrix(&mut rng, rows, cols);
            let s = f64::svd(&m).unwrap();
            assert_eq!(s.singular_values.len(), rows.min(cols));
            assert!(recompose(&s).sub(&m).unwrap().frobenius_norm() < 1e-12);
        }
        assert_eq!(f64::svd(&Matrix::zeros(0, 3)).unwrap().rank(), 0);
        assert!(f64::svd(&Matrix::new(1, 1, vec![f64::NAN]).unwrap()).is_err());
    }

    #[test]
    fn recomposes_every_sampled_low_rank_layer() {
        use crate::netmodel::sample_target_with_rank;
        for seed in 0..40 {
            let g: crate::netmodel::TargetNetwork<f64> = sample_target_with_rank(8, 2, 2, seed).unwrap();
            for layer in &g.layers {
                let m = layer.effective_weight();
                let s = f64::svd(&m).unwrap();
                assert!(recompose(&s).sub(&m).unwrap().frobenius_norm() < 1e-12, "seed {seed}");
                assert_eq!(s.rank(), 2);
            }
        }
    }
}
