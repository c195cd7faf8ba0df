use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{Forward, TargetNetwork};
use crate::rng::{seeded_rng, unit_ball_sample};
use crate::scalar::Real;
use crate::tensor::vector;

/// Error statistics of `‖f(x) − g(x)‖∞` over random inputs from a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceResult {
    pub samples: usize,
    pub max_abs_error: f64,
    pub mean_abs_error: f64,
    pub domain_radius: f64,
}

impl EquivalenceResult {
    pub fn within(&self, tolerance: f64) -> bool {
        self.max_abs_error <= tolerance
    }
}

/// Compares `f` and `g` on `samples` inputs drawn uniformly from the unit ball.
pub fn verify_equivalence<T: Real>(
    f: &dyn Forward<T>,
    g: &TargetNetwork<T>,
    samples: usize,
    seed: u64,
) -> Result<EquivalenceResult> {
    verify_equivalence_on(f, g, samples, 1.0, seed)
}

pub fn verify_equivalence_on<T: Real>(
    f: &dyn Forward<T>,
    g: &TargetNetwork<T>,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<EquivalenceResult> {
    if f.input_dim() != g.input_dim || f.output_dim() != g.output_dim() {
        return Err(Error::shape(
            "verify_equivalence",
            format!(
                "network maps {} -> {}, target maps {} -> {}",
                f.input_dim(),
                f.output_dim(),
                g.input_dim,
                g.output_dim()
            ),
        ));
    }
    let mut rng = seeded_rng(seed);
    let (mut max, mut sum) = (0.0f64, 0.0f64);
    for _ in 0..samples {
        let x = unit_ball_sample(&mut rng, g.input_dim, T::lit(radius));
        let err = vector::max_abs_diff(&f.forward(&x)?, &g.forward(&x)?).to_f64_lossy();
        if !err.is_finite() {
            return Err(Error::NonFinite("verify_equivalence"));
        }
        max = max.max(err);
        sum += err;
    }
    Ok(EquivalenceResult {
        samples,
        max_abs_error: max,
        mean_abs_error: if samples == 0 { 0.0 } else { sum / samples as f64 },
        domain_radius: radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::sample_target;
    use crate::wide::construct_wide;

    #[test]
    fn identical_networks_have_zero_error() {
        let g: TargetNetwork<f64> = sample_target(4, 2, 1).unwrap();
        let r = verify_equivalence(&g, &g, 200, 3).unwrap();
        assert_eq!(r.max_abs_error, 0.0);
        assert_eq!(r.samples, 200);
        assert_eq!(r.domain_radius, 1.0);
    }

    #[test]
    fn construction_passes_and_perturbation_is_detected() {
        let g: TargetNetwork<f64> = sample_target(4, 2, 8).unwrap();
        let (mut f, _) = construct_wide(&g, 5).unwrap();
        let r = verify_equivalence(&f, &g, 1000, 1).unwrap();
        assert!(r.max_abs_error <= 1e-6 && r.mean_abs_error <= r.max_abs_error);
        f.layers[1].norm.scale[3] += 0.1;
        let bad = verify_equivalence(&f, &g, 1000, 1).unwrap();
        assert!(bad.max_abs_error > 1e-3);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g: TargetNetwork<f64> = sample_target(4, 1, 1).unwrap();
        let h: TargetNetwork<f64> = sample_target(3, 1, 1).unwrap();
        assert!(verify_equivalence(&h, &g, 10, 0).is_err());
    }
}
