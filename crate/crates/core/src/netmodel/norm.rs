use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform_vec, SeededRng};
use crate::scalar::Real;
use crate::tensor::Matrix;

/// Normalization applied after a weight multiplication:
/// `scale ⊙ (W x + b − mean) / variance + shift`, with frozen `mean` and
/// `variance` and tunable `scale` and `shift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct NormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

impl<T: Real> NormParams<T> {
    /// Identity statistics (mean 0, variance 1), unit scale and zero shift.
    pub fn identity(width: usize) -> Self {
        NormParams {
            scale: vec![T::one(); width],
            shift: vec![T::zero(); width],
            mean: vec![T::zero(); width],
            variance: vec![T::one(); width],
        }
    }

    /// Frozen statistics drawn as `mean ~ U(-1, 1)`, `variance ~ U(0.5, 2)`.
    pub fn sampled(rng: &mut SeededRng, width: usize) -> Self {
        let mean = uniform_vec(rng, width, -1.0, 1.0);
        let variance = uniform_vec(rng, width, 0.5, 2.0);
        NormParams {
            scale: vec![T::one(); width],
            shift: vec![T::zero(); width],
            mean,
            variance,
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.scale.len();
        if self.shift.len() != w || self.mean.len() != w || self.variance.len() != w {
            return Err(Error::shape("NormParams", "field lengths differ"));
        }
        if let Some((unit, v)) = self
            .variance
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > T::zero()))
        {
            return Err(Error::NonPositiveVariance {
                unit,
                value: v.to_f64_lossy(),
            });
        }
        Ok(())
    }

    /// Folded `(scale / variance, shift − folded_scale · mean)`.
    pub fn folded(&self) -> (Vec<T>, Vec<T>) {
        let scale: Vec<T> = self
            .scale
            .iter()
            .zip(&self.variance)
            .map(|(&g, &s)| g / s)
            .collect();
        let shift = self
            .shift
            .iter()
            .zip(&scale)
            .zip(&self.mean)
            .map(|((&b, &g), &mu)| b - g * mu)
            .collect();
        (scale, shift)
    }

    /// Sets `scale` and `shift` so that [`folded`](Self::folded) returns the
    /// given pair; the frozen statistics are unchanged.
    pub fn set_folded(&mut self, folded_scale: &[T], folded_shift: &[T]) -> Result<()> {
        let w = self.width();
        if folded_scale.len() != w || folded_shift.len() != w {
            return Err(Error::shape("NormParams::set_folded", "length differs from width"));
        }
        for u in 0..w {
            self.scale[u] = folded_scale[u] * self.variance[u];
            self.shift[u] = folded_shift[u] + folded_scale[u] * self.mean[u];
        }
        Ok(())
    }

    /// Evaluates the unfolded layer on the pre-normalization vector `z = W x + b`.
    pub fn apply(&self, z: &[T]) -> Vec<T> {
        (0..self.width())
            .map(|u| self.scale[u] * (z[u] - self.mean[u]) / self.variance[u] + self.shift[u])
            .collect()
    }
}

/// Folds a normalization layer into a diagonal scale and a shift so that
/// `scale ⊙ (W x + b) + shift` equals the normalized layer for every `x`.
pub fn fold_norm<T: Real>(
    layer_weight: &Matrix<T>,
    bias: &[T],
    norm: &NormParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    norm.validate()?;
    if layer_weight.rows() != norm.width() || bias.len() != norm.width() {
        return Err(Error::shape(
            "fold_norm",
            format!(
                "weight with {} rows and bias of length {} for width {}",
                layer_weight.rows(),
                bias.len(),
                norm.width()
            ),
        ));
    }
    Ok(norm.folded())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded_rng, WeightDist};
    use crate::tensor::vector;

    #[test]
    fn identity_norm_folds_to_identity() {
        let w = Matrix::<f64>::identity(3);
        let (g, b) = fold_norm(&w, &[0.0; 3], &NormParams::identity(3)).unwrap();
        assert_eq!(g, vec![1.0; 3]);
        assert_eq!(b, vec![0.0; 3]);
    }

    #[test]
    fn variance_two_halves_the_scale() {
        let mut n = NormParams::<f64>::identity(2);
        n.variance = vec![2.0, 2.0];
        let (g, b) = fold_norm(&Matrix::identity(2), &[0.0; 2], &n).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn nonpositive_variance_is_rejected() {
        let mut n = NormParams::<f64>::identity(2);
        n.variance[1] = 0.0;
        assert!(matches!(
            fold_norm(&Matrix::identity(2), &[0.0; 2], &n),
            Err(Error::NonPositiveVariance { unit: 1, .. })
        ));
    }

    #[test]
    fn folded_forward_matches_unfolded() {
        let mut rng = seeded_rng(11);
        let w: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, 6, 4);
        let bias: Vec<f64> = uniform_vec(&mut rng, 6, -1.0, 1.0);
        let mut norm = NormParams::sampled(&mut rng, 6);
        norm.scale = uniform_vec(&mut rng, 6, -2.0, 2.0);
        norm.shift = uniform_vec(&mut rng, 6, -2.0, 2.0);
        let (g, b) = fold_norm(&w, &bias, &norm).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = uniform_vec(&mut rng, 4, -1.0, 1.0);
            let z = vector::add(&w.matvec(&x).unwrap(), &bias);
            let unfolded = norm.apply(&z);
            let folded = vector::add(&vector::mul(&g, &z), &b);
            assert!(vector::max_abs_diff(&unfolded, &folded) <= 1e-12);
        }
    }

    #[test]
    fn set_folded_round_trips() {
        let mut rng = seeded_rng(5);
        let mut norm = NormParams::<f64>::sampled(&mut rng, 5);
        let g: Vec<f64> = uniform_vec(&mut rng, 5, -3.0, 3.0);
        let b: Vec<f64> = uniform_vec(&mut rng, 5, -3.0, 3.0);
        norm.set_folded(&g, &b).unwrap();
        let (g2, b2) = norm.folded();
        assert!(vector::max_abs_diff(&g, &g2) <= 1e-14);
        assert!(vector::max_abs_diff(&b, &b2) <= 1e-14);
    }
}
