//! Reference implementations written directly from the network definitions,
//! independent of the library's forward passes.

#![allow(dead_code)]

use bnrecon::netmodel::{FrozenWideStack, SkipBlockStack, TargetNetwork};
use bnrecon::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn matvec(m: &Matrix<f64>, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| (0..m.cols()).map(|j| m.get(i, j) * x[j]).sum())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|a| if a > 0.0 { a } else { 0.0 }).collect()
}

pub fn target_forward(g: &TargetNetwork<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in g.layers.iter().enumerate() {
        let z = matvec(&layer.weight, &h);
        let z: Vec<f64> = (0..z.len()).map(|u| layer.scale[u] * z[u] + layer.shift[u]).collect();
        h = if i + 1 < g.layers.len() { relu(z) } else { z };
    }
    h
}

pub fn wide_forward(f: &FrozenWideStack<f64>, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for (i, layer) in f.layers.iter().enumerate() {
        let z = matvec(&layer.weight, &h);
        let n = &layer.norm;
        let z: Vec<f64> = (0..z.len())
            .map(|u| n.scale[u] * (z[u] - n.mean[u]) / n.variance[u] + n.shift[u])
            .collect();
        h = if i + 1 < f.layers.len() { relu(z) } else { z };
    }
    h
}

pub fn skip_forward(f: &SkipBlockStack<f64>, x: &[f64]) -> Vec<f64> {
    let k = f.chunk;
    let mut h = x.to_vec();
    for (li, layer) in f.layers.iter().enumerate() {
        h.resize(f.padded_dim, 0.0);
        let mut prev: Option<Vec<f64>> = None;
        for (i, block) in layer.blocks.iter().enumerate() {
            let mut inner = matvec(&block.projection, &h[i * k..(i + 1) * k]);
            if let Some(p) = &prev {
                for (a, b) in inner.iter_mut().zip(relu(p.clone())) {
                    *a += b;
                }
            }
            let z = matvec(&block.weight, &inner);
            let n = &block.norm;
            prev = Some(
                (0..z.len())
                    .map(|u| n.scale[u] * (z[u] - n.mean[u]) / n.variance[u] + n.shift[u])
                    .collect(),
            );
        }
        let out = matvec(&layer.output_weight, prev.as_ref().expect("blocks"));
        h = if li + 1 < f.layers.len() { relu(out) } else { out };
    }
    h
}

/// Uniform point in the unit ball of dimension `d`.
pub fn ball_point(r: &mut ChaCha20Rng, d: usize) -> Vec<f64> {
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = r.random::<f64>().powf(1.0 / d as f64);
    z.iter().map(|v| v / norm * radius).collect()
}

/// Max over `samples` unit-ball inputs of `‖f(x) − g(x)‖∞`.
pub fn max_error(f: impl Fn(&[f64]) -> Vec<f64>, g: &TargetNetwork<f64>, samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..samples)
        .map(|_| {
            let x = ball_point(&mut r, g.input_dim);
            f(&x)
                .iter()
                .zip(target_forward(g, &x))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Boolean permanent by enumerating all permutations.
pub fn permutation_oracle(b: &[Vec<bool>]) -> bool {
    fn go(b: &[Vec<bool>], col: usize, used: &mut Vec<bool>) -> bool {
        if col == b.len() {
            return true;
        }
        for row in 0..b.len() {
            if !used[row] && b[row][col] {
                used[row] = true;
                let found = go(b, col + 1, used);
                used[row] = false;
                if found {
                    return true;
                }
            }
        }
        false
    }
    go(b, 0, &mut vec![false; b.len()])
}

pub fn random_matrix(r: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

/// Column-wise Kronecker product from the definition.
pub fn khatri_rao_oracle(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    Matrix::from_fn(a.rows() * b.rows(), a.cols(), |i, j| {
        a.get(i / b.rows(), j) * b.get(i % b.rows(), j)
    })
}
