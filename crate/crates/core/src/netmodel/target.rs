use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_rng, uniform_vec, WeightDist};
use crate::scalar::Real;
use crate::tensor::{vector, Matrix};

/// One affine layer `scale ⊙ (weight · x) + shift` of a target network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TargetLayer<T> {
    /// Diagonal of the scale matrix.
    pub scale: Vec<T>,
    pub weight: Matrix<T>,
    pub shift: Vec<T>,
}

impl<T: Real> TargetLayer<T> {
    pub fn new(scale: Vec<T>, weight: Matrix<T>, shift: Vec<T>) -> Result<Self> {
        let layer = TargetLayer {
            scale,
            weight,
            shift,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Layer with unit scale.
    pub fn affine(weight: Matrix<T>, shift: Vec<T>) -> Result<Self> {
        Self::new(vec![T::one(); weight.rows()], weight, shift)
    }

    pub fn validate(&self) -> Result<()> {
        let out = self.weight.rows();
        if self.scale.len() != out || self.shift.len() != out {
            return Err(Error::shape(
                "TargetLayer",
                format!(
                    "{} outputs with scale length {} and shift length {}",
                    out,
                    self.scale.len(),
                    self.shift.len()
                ),
            ));
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// `diag(scale) · weight`.
    pub fn effective_weight(&self) -> Matrix<T> {
        self.weight
            .scale_rows(&self.scale)
            .expect("validated layer shapes")
    }

    /// Pre-activation `scale ⊙ (weight · x) + shift`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let z = self.weight.matvec(x)?;
        Ok(vector::add(&vector::mul(&self.scale, &z), &self.shift))
    }
}

/// `g(x) = L_l(ReLU(L_{l−1}(… ReLU(L_1(x)))))`: ReLU between layers and none
/// after the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TargetNetwork<T> {
    pub input_dim: usize,
    pub layers: Vec<TargetLayer<T>>,
}

impl<T: Real> TargetNetwork<T> {
    pub fn new(input_dim: usize, layers: Vec<TargetLayer<T>>) -> Result<Self> {
        let g = TargetNetwork { input_dim, layers };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("TargetNetwork", "no layers"));
        }
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim() != dim {
                return Err(Error::shape(
                    "TargetNetwork",
                    format!("layer {i} expects {} inputs, previous width is {dim}", layer.in_dim()),
                ));
            }
            dim = layer.out_dim();
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, TargetLayer::out_dim)
    }

    /// Output of every layer (post-ReLU for hidden layers, raw for the last).
    pub fn activations(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                "forward_target",
                format!("input of length {} for input_dim {}", x.len(), self.input_dim),
            ));
        }
        let mut out = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h)?;
            if i != last {
                vector::relu_in_place(&mut h);
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.activations(x)?.pop().expect("at least one layer"))
    }
}

pub fn forward_target<T: Real>(g: &TargetNetwork<T>, x: &[T]) -> Result<Vec<T>> {
    g.forward(x)
}

/// Rescales `w` so its operator norm is at most 1.
fn clamp_operator_norm<T: Real>(w: Matrix<T>) -> Result<Matrix<T>> {
    let norm = w.operator_norm()?;
    Ok(if norm > T::one() {
        w.scaled(T::one() / norm)
    } else {
        w
    })
}

/// Random depth-`l`, width-`d` target: weights `U(-1, 1)` rescaled to operator
/// norm ≤ 1, scales `U(0.5, 1.5)`, shifts `U(-0.5, 0.5)`.
pub fn sample_target<T: Real>(d: usize, l: usize, seed: u64) -> Result<TargetNetwork<T>> {
    sample_target_with_rank(d, l, d, seed)
}

/// As [`sample_target`] but each weight is a product of `d×r` and `r×d`
/// uniform factors, so `diag(scale)·weight` has rank at most `r`.
pub fn sample_target_with_rank<T: Real>(
    d: usize,
    l: usize,
    r: usize,
    seed: u64,
) -> Result<TargetNetwork<T>> {
    if d == 0 || l == 0 || r == 0 || r > d {
        return Err(Error::InvalidConfig(format!(
            "sample_target needs d ≥ 1, l ≥ 1 and 1 ≤ r ≤ d (got d={d}, l={l}, r={r})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut layers = Vec::with_capacity(l);
    for _ in 0..l {
        let raw = if r == d {
            WeightDist::Uniform.matrix(&mut rng, d, d)
        } else {
            let left: Matrix<T> = WeightDist::Uniform.matrix(&mut rng, d, r);
            let right: Matrix<T> = WeightDist::Uniform.matrix(&mut rng, r, d);
            left.matmul(&right)?
        };
        let weight = clamp_operator_norm(raw)?;
        let scale = uniform_vec(&mut rng, d, 0.5, 1.5);
        let shift = uniform_vec(&mut rng, d, -0.5, 0.5);
        layers.push(TargetLayer::new(scale, weight, shift)?);
    }
    TargetNetwork::new(d, layers)
}

/// Per-layer upper bounds on activation norms over inputs of norm ≤ `radius(0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormBound<T> {
    /// `radii[0]` bounds the input, `radii[i]` the output of layer `i`.
    pub radii: Vec<T>,
}

impl<T: Real> NormBound<T> {
    pub fn input(&self) -> T {
        self.radii[0]
    }

    /// Bound on the input of layer `i` (zero-based).
    pub fn layer_input(&self, i: usize) -> T {
        self.radii[i]
    }
}

/// Bounds on the unit ball.
pub fn propagate_bound<T: Real>(g: &TargetNetwork<T>) -> Result<NormBound<T>> {
    propagate_bound_from(g, T::one())
}

/// `r_i = ‖diag(scale_i) W_i‖_op · r_{i−1} + ‖shift_i‖₂`. ReLU is
/// nonexpansive, so the bound holds before and after each activation.
pub fn propagate_bound_from<T: Real>(g: &TargetNetwork<T>, input_radius: T) -> Result<NormBound<T>> {
    let mut radii = Vec::with_capacity(g.depth() + 1);
    radii.push(input_radius);
    let mut r = input_radius;
    for layer in &g.layers {
        r = layer.effective_weight().operator_norm()? * r + vector::norm2(&layer.shift);
        radii.push(r);
    }
    Ok(NormBound { radii })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::unit_ball_sample;

    #[test]
    fn identity_layer_is_identity() {
        let g = TargetNetwork::new(
            3,
            vec![TargetLayer::affine(Matrix::<f64>::identity(3), vec![0.0; 3]).unwrap()],
        )
        .unwrap();
        let x = vec![0.3, -0.2, 0.9];
        assert_eq!(forward_target(&g, &x).unwrap(), x);
    }

    #[test]
    fn dead_hidden_layer_leaves_last_shift() {
        let hidden =
            TargetLayer::affine(Matrix::<f64>::identity(2), vec![-10.0, -10.0]).unwrap();
        let last = TargetLayer::new(
            vec![2.0, 3.0],
            Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 2.0]]).unwrap(),
            vec![0.25, -0.5],
        )
        .unwrap();
        let g = TargetNetwork::new(2, vec![hidden, last]).unwrap();
        assert_eq!(g.forward(&[0.5, -0.5]).unwrap(), vec![0.25, -0.5]);
    }

    #[test]
    fn two_layer_forward_matches_straight_line_evaluation() {
        let g: TargetNetwork<f64> = sample_target(4, 2, 21).unwrap();
        let x = [0.1, -0.4, 0.25, 0.3];
        let (l1, l2) = (&g.layers[0], &g.layers[1]);
        let mut h = [0.0; 4];
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..4 {
                s += l1.weight.get(i, j) * x[j];
            }
            h[i] = (l1.scale[i] * s + l1.shift[i]).max(0.0);
        }
        let mut y = [0.0; 4];
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..4 {
                s += l2.weight.get(i, j) * h[j];
            }
            y[i] = l2.scale[i] * s + l2.shift[i];
        }
        let out = g.forward(&x).unwrap();
        assert!(vector::max_abs_diff(&out, &y) <= 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g: TargetNetwork<f64> = sample_target(3, 1, 0).unwrap();
        assert!(g.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn sampled_targets_are_reproducible_and_normalized() {
        for seed in [0, 1, 2] {
            let a: TargetNetwork<f64> = sample_target(5, 3, seed).unwrap();
            let b: TargetNetwork<f64> = sample_target(5, 3, seed).unwrap();
            assert_eq!(a, b);
            for layer in &a.layers {
                assert!(layer.weight.operator_norm().unwrap() <= 1.0 + 1e-12);
                assert!(layer.scale.iter().all(|&s| (0.5..1.5).contains(&s)));
                assert!(layer.shift.iter().all(|&s| (-0.5..0.5).contains(&s)));
            }
        }
    }

    #[test]
    fn bound_examples() {
        let id = TargetNetwork::new(
            2,
            vec![TargetLayer::affine(Matrix::<f64>::identity(2), vec![0.0; 2]).unwrap()],
        )
        .unwrap();
        let b = propagate_bound(&id).unwrap();
        assert!((b.radii[1] - 1.0).abs() < 1e-12);

        let doubled = TargetNetwork::new(
            2,
            vec![TargetLayer::new(vec![2.0f64, 2.0], Matrix::identity(2), vec![0.0; 2]).unwrap()],
        )
        .unwrap();
        assert!((propagate_bound(&doubled).unwrap().radii[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bound_dominates_sampled_activations() {
        let g: TargetNetwork<f64> = sample_target(6, 3, 99).unwrap();
        let bound = propagate_bound(&g).unwrap();
        let mut rng = seeded_rng(100);
        for _ in 0..10_000 {
            let x = unit_ball_sample(&mut rng, 6, 1.0);
            for (i, a) in g.activations(&x).unwrap().iter().enumerate() {
                assert!(vector::norm2(a) <= bound.radii[i + 1] + 1e-12);
            }
        }
    }
}
