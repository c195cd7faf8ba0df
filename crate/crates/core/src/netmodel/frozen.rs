use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::norm::NormParams;
use crate::rng::{derive_seed, seeded_rng, SeededRng, WeightDist};
use crate::scalar::Real;
use crate::tensor::{vector, Matrix};

/// Frozen weight followed by a tunable normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FrozenLayer<T> {
    pub weight: Matrix<T>,
    pub norm: NormParams<T>,
}

impl<T: Real> FrozenLayer<T> {
    pub fn sample(rng: &mut SeededRng, dist: WeightDist, in_dim: usize, out_dim: usize) -> Self {
        let weight = dist.matrix(rng, out_dim, in_dim);
        let norm = NormParams::sampled(rng, out_dim);
        FrozenLayer { weight, norm }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn validate(&self) -> Result<()> {
        self.norm.validate()?;
        if self.norm.width() != self.out_dim() {
            return Err(Error::shape(
                "FrozenLayer",
                format!(
                    "norm width {} for a weight with {} rows",
                    self.norm.width(),
                    self.out_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Normalized pre-activation of `x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.norm.apply(&self.weight.matvec(x)?))
    }
}

/// Alternating frozen-weight / normalization stack with a ReLU after every
/// layer except the last.
///
/// The wide construction uses two layers per target layer (`d → d² → d`), the
/// low-rank construction four.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct FrozenWideStack<T> {
    pub input_dim: usize,
    pub layers: Vec<FrozenLayer<T>>,
}

impl<T: Real> FrozenWideStack<T> {
    pub fn new(input_dim: usize, layers: Vec<FrozenLayer<T>>) -> Result<Self> {
        let f = FrozenWideStack { input_dim, layers };
        f.validate()?;
        Ok(f)
    }

    /// Samples a stack whose layer widths are `widths[1..]` on input `widths[0]`.
    pub fn sample(widths: &[usize], dist: WeightDist, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidConfig(
                "a frozen stack needs an input width and at least one layer".into(),
            ));
        }
        let mut rng = seeded_rng(seed);
        let layers = widths
            .windows(2)
            .map(|w| FrozenLayer::sample(&mut rng, dist, w[0], w[1]))
            .collect();
        Self::new(widths[0], layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::shape("FrozenWideStack", "no layers"));
        }
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_dim() != dim {
                return Err(Error::shape(
                    "FrozenWideStack",
                    format!("layer {i} expects {} inputs, previous width is {dim}", layer.in_dim()),
                ));
            }
            dim = layer.out_dim();
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, FrozenLayer::out_dim)
    }

    /// Pre-activations of every layer.
    pub fn pre_activations(&self, x: &[T]) -> Result<Vec<Vec<T>>> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                "forward_wide",
                format!("input of length {} for input_dim {}", x.len(), self.input_dim),
            ));
        }
        let mut out: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = match out.last() {
                None => layer.apply(x)?,
                Some(prev) => layer.apply(&vector::relu(prev))?,
            };
            out.push(z);
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(self.pre_activations(x)?.pop().expect("at least one layer"))
    }

    /// Number of tunable normalization parameters (scale and shift).
    pub fn trainable_parameters(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.out_dim()).sum()
    }

    pub fn frozen_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows() * l.weight.cols()).sum()
    }
}

pub fn forward_wide<T: Real>(f: &FrozenWideStack<T>, x: &[T]) -> Result<Vec<T>> {
    f.forward(x)
}

/// One skip-connected block: frozen `weight` (`dk×dk`) and `projection`
/// (`dk×k`) with a tunable normalization of width `dk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SkipBlock<T> {
    pub weight: Matrix<T>,
    pub projection: Matrix<T>,
    pub norm: NormParams<T>,
}

/// The `σ` blocks realizing one target layer plus the frozen read-out
/// `output_weight` (`d×dk`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SkipLayer<T> {
    pub blocks: Vec<SkipBlock<T>>,
    pub output_weight: Matrix<T>,
}

impl<T: Real> SkipLayer<T> {
    pub fn sample(rng: &mut SeededRng, dist: WeightDist, d: usize, padded: usize, k: usize) -> Self {
        let width = d * k;
        let blocks = (0..padded / k)
            .map(|_| SkipBlock {
                weight: dist.matrix(rng, width, width),
                projection: dist.matrix(rng, width, k),
                norm: NormParams::sampled(rng, width),
            })
            .collect();
        SkipLayer {
            blocks,
            output_weight: dist.matrix(rng, d, width),
        }
    }

    /// Block pre-activations `L_1 … L_σ` for a padded input.
    pub fn block_outputs(&self, padded_x: &[T], k: usize) -> Result<Vec<Vec<T>>> {
        let mut out: Vec<Vec<T>> = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let chunk = &padded_x[i * k..(i + 1) * k];
            let mut inner = block.projection.matvec(chunk)?;
            if let Some(prev) = out.last() {
                inner = vector::add(&vector::relu(prev), &inner);
            }
            out.push(block.norm.apply(&block.weight.matvec(&inner)?));
        }
        Ok(out)
    }

    /// `W_{σ+1} L_σ`, before any trailing ReLU.
    pub fn apply(&self, padded_x: &[T], k: usize) -> Result<Vec<T>> {
        let blocks = self.block_outputs(padded_x, k)?;
        self.output_weight.matvec(blocks.last().expect("at least one block"))
    }
}

/// Depth-for-width stack: each target layer is realized by `σ = D/k` blocks
/// of width `dk`, where `D` is `d` rounded up to a multiple of `k` and
/// chunks beyond `d` are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SkipBlockStack<T> {
    pub input_dim: usize,
    pub padded_dim: usize,
    pub chunk: usize,
    pub layers: Vec<SkipLayer<T>>,
}

/// `d` rounded up to a multiple of `k`.
pub fn padded_dim(d: usize, k: usize) -> usize {
    d.div_ceil(k) * k
}

impl<T: Real> SkipBlockStack<T> {
    /// Samples every target layer's blocks from its own stream
    /// `derive_seed(seed, layer)`.
    pub fn sample(d: usize, k: usize, depth: usize, dist: WeightDist, seed: u64) -> Result<Self> {
        if k == 0 || k > d {
            return Err(Error::InvalidConfig(format!("chunk size must satisfy 1 ≤ k ≤ d, got k={k}, d={d}")));
        }
        let padded = padded_dim(d, k);
        let layers = (0..depth)
            .map(|j| SkipLayer::sample(&mut seeded_rng(derive_seed(seed, j as u64)), dist, d, padded, k))
            .collect();
        let f = SkipBlockStack {
            input_dim: d,
            padded_dim: padded,
            chunk: k,
            layers,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn blocks_per_layer(&self) -> usize {
        self.padded_dim / self.chunk
    }

    pub fn block_width(&self) -> usize {
        self.input_dim * self.chunk
    }

    pub fn validate(&self) -> Result<()> {
        let (d, k) = (self.input_dim, self.chunk);
        if k == 0 || self.padded_dim % k != 0 || self.padded_dim < d {
            return Err(Error::shape("SkipBlockStack", "padded width is not a multiple of the chunk"));
        }
        if self.layers.is_empty() {
            return Err(Error::shape("SkipBlockStack", "no layers"));
        }
        let width = d * k;
        for layer in &self.layers {
            if layer.blocks.len() != self.blocks_per_layer() {
                return Err(Error::shape("SkipBlockStack", "block count differs from D/k"));
            }
            if layer.output_weight.shape() != (d, width) {
                return Err(Error::shape("SkipBlockStack", "read-out weight is not d×dk"));
            }
            for block in &layer.blocks {
                block.norm.validate()?;
                if block.weight.shape() != (width, width)
                    || block.projection.shape() != (width, k)
                    || block.norm.width() != width
                {
                    return Err(Error::shape("SkipBlockStack", "block shapes do not match dk×dk, dk×k"));
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                "forward_skip",
                format!("input of length {} for input_dim {}", x.len(), self.input_dim),
            ));
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (j, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&vector::resized(&h, self.padded_dim), self.chunk)?;
            if j != last {
                vector::relu_in_place(&mut h);
            }
        }
        Ok(h)
    }

    pub fn trainable_parameters(&self) -> usize {
        2 * self.layers.len() * self.blocks_per_layer() * self.block_width()
    }

    pub fn frozen_parameters(&self) -> usize {
        let (d, k) = (self.input_dim, self.chunk);
        let w = d * k;
        self.layers.len() * (self.blocks_per_layer() * (w * w + w * k) + d * w)
    }
}

pub fn forward_skip<T: Real>(f: &SkipBlockStack<T>, x: &[T]) -> Result<Vec<T>> {
    f.forward(x)
}

/// The `i`-th (one-based) chunk of length `k`.
pub fn subselect<T: Real>(x: &[T], i: usize, k: usize) -> Result<Vec<T>> {
    let max = if k == 0 { 0 } else { x.len() / k };
    if i == 0 || i > max {
        return Err(Error::IndexOutOfRange { index: i, max });
    }
    Ok(x[(i - 1) * k..i * k].to_vec())
}
