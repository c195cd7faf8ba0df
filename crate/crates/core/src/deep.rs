//! Depth construction with skip connections. Each target layer is split into
//! `σ = D/k` input chunks; block `i` injects chunk `x_i` through a frozen
//! projection, and the blocks' scales are solved from the last block down so
//! that the chained linear map reproduces one column slice of `Γ*W̄` per block.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{
    padded_dim, propagate_bound_from, SkipBlock, SkipBlockStack, SkipLayer, TargetNetwork,
};
use crate::report::{LayerReport, ReconstructionReport, SolveDiagnostics};
use crate::rng::{derive_seed, seeded_rng};
use crate::scalar::Real;
use crate::tensor::solve::pinv_solve;
use crate::tensor::{vector, Matrix};
use crate::wide::{min_abs, solve_diagonal_system, ConstructConfig};

/// Solved scales below this magnitude count as zero.
pub const ZERO_SCALE_TOLERANCE: f64 = 1e-12;

/// Largest accepted bound `‖E − Γ*W̄‖_F · r + ‖e − β*‖₂` on the sup error of a
/// solved skip layer over its input ball, where `x ↦ E x + e` is the layer's
/// realized affine map measured through its own forward pass.
pub const LAYER_MAP_TOLERANCE: f64 = 1e-7;

/// Largest accepted `‖upstream · diag(γ) · W_i A_i − target slice‖_F`.
pub const BLOCK_RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Chunk `i` (one-based) of width `k` as a `k×len` selection matrix `[0 | I_k | 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubSelection {
    pub index: usize,
    pub chunk: usize,
}

impl SubSelection {
    pub fn matrix<T: Real>(&self, len: usize) -> Matrix<T> {
        let offset = (self.index - 1) * self.chunk;
        Matrix::from_fn(self.chunk, len, |r, c| {
            if c == offset + r {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// Folded scale and shift of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BlockSolution<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub diagnostics: SolveDiagnostics,
    /// Every entry of `gamma` is nonzero.
    pub nonzero: bool,
}

/// Solves `upstream · diag(γ) · (W_i A_i) = target_slice` for block `i`
/// (zero-based), where `upstream = W_{σ+1} Γ_σ W_σ ⋯ Γ_{i+1} W_{i+1}`.
/// The returned shift is zero; it is set by the linearization pass.
pub fn solve_block<T: Real>(
    i: usize,
    block: &SkipBlock<T>,
    upstream: &Matrix<T>,
    target_slice: &Matrix<T>,
    cfg: &ConstructConfig,
) -> Result<BlockSolution<T>> {
    let injected = block.weight.matmul(&block.projection)?;
    let solved = solve_diagonal_system(upstream, &injected, target_slice)?;
    let accepted = solved.is_unique() && solved.residual <= T::lit(BLOCK_RESIDUAL_TOLERANCE);
    if !accepted && !cfg.allow_pinv_fallback {
        return Err(Error::SystemSingular {
            layer: 0,
            block: Some(i),
            condition: solved.outcome.condition_estimate.to_f64_lossy(),
        });
    }
    if !vector::all_finite(&solved.x) {
        return Err(Error::NonFinite("solve_block"));
    }
    let zero = T::lit(ZERO_SCALE_TOLERANCE);
    let nonzero = solved.x.iter().all(|g| g.abs() > zero);
    Ok(BlockSolution {
        beta: vec![T::zero(); solved.x.len()],
        gamma: solved.x,
        diagnostics: SolveDiagnostics {
            classification: solved.outcome.classification,
            residual: solved.residual.to_f64_lossy(),
            condition_estimate: solved.outcome.condition_estimate.to_f64_lossy(),
            pinv_fallback: !accepted,
        },
        nonzero,
    })
}

/// Solves the normalization layers of one target layer in place and returns
/// one report entry per block.
fn construct_skip_layer<T: Real>(
    layer: &mut SkipLayer<T>,
    target: &Matrix<T>,
    target_shift: &[T],
    k: usize,
    radius: T,
    cfg: &ConstructConfig,
) -> Result<Vec<LayerReport>> {
    let d = target.rows();
    let padded = layer.blocks.len() * k;
    let sigma = layer.blocks.len();
    let width = d * k;
    let target = Matrix::from_fn(d, padded, |r, c| if c < d { target.get(r, c) } else { T::zero() });

    let mut solutions: Vec<Option<BlockSolution<T>>> = vec![None; sigma];
    let mut upstream = layer.output_weight.clone();
    for i in (0..sigma).rev() {
        let slice = target.col_range(i * k, (i + 1) * k);
        let solution = solve_block(i, &layer.blocks[i], &upstream, &slice, cfg)?;
        if !solution.nonzero {
            let unit = solution
                .gamma
                .iter()
                .position(|g| g.abs() <= T::lit(ZERO_SCALE_TOLERANCE))
                .unwrap_or(0);
            return Err(Error::ZeroScaleEntry {
                layer: 0,
                block: i,
                unit,
            });
        }
        upstream = upstream.scale_cols(&solution.gamma)?.matmul(&layer.blocks[i].weight)?;
        solutions[i] = Some(solution);
    }
    let mut solutions: Vec<BlockSolution<T>> = solutions.into_iter().map(|s| s.expect("solved")).collect();

    // Affine tracking of L_i = M x + c over the padded input.
    let margin = T::lit(cfg.margin);
    let mut m: Matrix<T> = Matrix::zeros(width, padded);
    let mut c = vec![T::zero(); width];
    let mut margins = vec![f64::INFINITY; sigma];
    for i in 0..sigma {
        let block = &layer.blocks[i];
        let select = SubSelection { index: i + 1, chunk: k }.matrix::<T>(padded);
        let n = m.add(&block.projection.matmul(&select)?)?;
        let wn = block.weight.matmul(&n)?;
        let wc = block.weight.matvec(&c)?;
        let gamma = &solutions[i].gamma;
        let beta = if i + 1 < sigma {
            let beta: Vec<T> = wn
                .row_norms()
                .iter()
                .enumerate()
                .map(|(u, &norm)| gamma[u].abs() * norm * radius - gamma[u] * wc[u] + margin)
                .collect();
            margins[i] = wn
                .row_norms()
                .iter()
                .enumerate()
                .map(|(u, &norm)| (gamma[u] * wc[u] + beta[u] - gamma[u].abs() * norm * radius).to_f64_lossy())
                .fold(f64::INFINITY, f64::min);
            beta
        } else {
            let carried = layer.output_weight.matvec(&vector::mul(gamma, &wc))?;
            pinv_solve(&layer.output_weight, &vector::sub(target_shift, &carried))?
        };
        c = vector::add(&vector::mul(gamma, &wc), &beta);
        m = wn.scale_rows(gamma)?;
        solutions[i].beta = beta;
    }

    for (block, solution) in layer.blocks.iter_mut().zip(&solutions) {
        block.norm.set_folded(&solution.gamma, &solution.beta)?;
    }
    let deviation = realized_deviation(layer, &target, target_shift, k, radius)?;
    if !(deviation <= T::lit(LAYER_MAP_TOLERANCE)) && !cfg.allow_pinv_fallback {
        return Err(Error::InexactLayer {
            layer: 0,
            deviation: deviation.to_f64_lossy(),
        });
    }

    let mut reports = Vec::with_capacity(sigma);
    for (i, solution) in solutions.iter().enumerate() {
        reports.push(LayerReport {
            layer: 0,
            block: Some(i),
            stage: None,
            solve: solution.diagnostics.clone(),
            min_margin: margins[i],
            input_radius: radius.to_f64_lossy(),
            min_abs_gamma: min_abs(&solution.gamma),
        });
    }
    Ok(reports)
}

/// Bound on `sup_{‖x‖≤r} ‖layer(x) − (T x + β*)‖₂` from the realized affine map,
/// valid while every block pre-activation stays above its margin.
fn realized_deviation<T: Real>(
    layer: &SkipLayer<T>,
    padded_target: &Matrix<T>,
    target_shift: &[T],
    k: usize,
    radius: T,
) -> Result<T> {
    let padded = padded_target.cols();
    let scale = if radius > T::zero() { radius } else { T::one() };
    let offset = layer.apply(&vec![T::zero(); padded], k)?;
    let mut squared = T::zero();
    let mut probe = vec![T::zero(); padded];
    for j in 0..padded {
        probe[j] = scale;
        let column = vector::scale(&vector::sub(&layer.apply(&probe, k)?, &offset), T::one() / scale);
        probe[j] = T::zero();
        squared = squared
            + column
                .iter()
                .enumerate()
                .map(|(r, &v)| (v - padded_target.get(r, j)).powi(2))
                .sum::<T>();
    }
    Ok(squared.sqrt() * radius + vector::norm2(&vector::sub(&offset, target_shift)))
}

fn relabel(err: Error, layer: usize) -> Error {
    match err {
        Error::InexactLayer { deviation, .. } => Error::InexactLayer { layer, deviation },
        Error::ZeroScaleEntry { block, unit, .. } => Error::ZeroScaleEntry { layer, block, unit },
        other => crate::wide::at_layer(other, layer),
    }
}

pub fn construct_deep<T: Real>(
    g: &TargetNetwork<T>,
    k: usize,
    seed: u64,
) -> Result<(SkipBlockStack<T>, ReconstructionReport)> {
    construct_deep_with(g, k, seed, &ConstructConfig::default())
}

/// Samples the blocks of every target layer (layer `j` from
/// `derive_seed(seed, j)`) and solves them. When a layer's solve fails with a
/// zero scale, a block residual above tolerance or an inexact realized map,
/// that layer alone is redrawn from `derive_seed(derive_seed(seed, j), attempt)`, up to
/// `cfg.max_resamples` times per layer.
pub fn construct_deep_with<T: Real>(
    g: &TargetNetwork<T>,
    k: usize,
    seed: u64,
    cfg: &ConstructConfig,
) -> Result<(SkipBlockStack<T>, ReconstructionReport)> {
    g.validate()?;
    let d = g.input_dim;
    if let Some((i, _)) = g
        .layers
        .iter()
        .enumerate()
        .find(|(_, l)| l.in_dim() != d || l.out_dim() != d)
    {
        return Err(Error::shape(
            "construct_deep",
            format!("target layer {i} is not {d}x{d}"),
        ));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("chunk size must satisfy 1 ≤ k ≤ d, got k={k}, d={d}")));
    }
    let padded = padded_dim(d, k);
    let bound = propagate_bound_from(g, T::lit(cfg.input_radius))?;
    let mut report = ReconstructionReport::new("deep", seed);
    let mut layers = Vec::with_capacity(g.depth());

    for (j, target) in g.layers.iter().enumerate() {
        let layer_seed = derive_seed(seed, j as u64);
        let weight = target.effective_weight();
        let mut attempt = 0;
        loop {
            let draw = if attempt == 0 { layer_seed } else { derive_seed(layer_seed, attempt as u64) };
            let mut layer = SkipLayer::sample(&mut seeded_rng(draw), cfg.dist, d, padded, k);
            match construct_skip_layer(&mut layer, &weight, &target.shift, k, bound.layer_input(j), cfg) {
                Ok(entries) => {
                    report.layers.extend(entries.into_iter().map(|mut e| {
                        e.layer = j;
                        e
                    }));
                    layers.push(layer);
                    break;
                }
                Err(Error::ZeroScaleEntry { .. } | Error::SystemSingular { .. } | Error::InexactLayer { .. })
                    if attempt < cfg.max_resamples =>
                {
                    attempt += 1;
                    report.resamples += 1;
                }
                Err(e) => return Err(relabel(e, j)),
            }
        }
    }
    let stack = SkipBlockStack {
        input_dim: d,
        padded_dim: padded,
        chunk: k,
        layers,
    };
    stack.validate()?;
    report.trainable_parameters = stack.trainable_parameters();
    report.frozen_parameters = stack.frozen_parameters();
    Ok((stack, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{sample_target, subselect};
    use crate::rng::{seeded_rng, unit_ball_sample, WeightDist};
    use crate::wide::construct_wide;

    fn max_error<F: Fn(&[f64]) -> Vec<f64>>(f: F, g: &TargetNetwork<f64>, n: usize, seed: u64) -> f64 {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let x = unit_ball_sample(&mut rng, g.input_dim, 1.0);
                vector::max_abs_diff(&f(&x), &g.forward(&x).unwrap())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn selection_matrix_matches_subselect() {
        let x: Vec<f64> = (0..6).map(|v| v as f64).collect();
        for i in 1..=3 {
            let s = SubSelection { index: i, chunk: 2 }.matrix::<f64>(6);
            assert_eq!(s.matvec(&x).unwrap(), subselect(&x, i, 2).unwrap());
        }
        let sum = (1..=3).fold(vec![0.0; 6], |acc, i| {
            let s = SubSelection { index: i, chunk: 2 }.matrix::<f64>(6);
            vector::add(&acc, &s.transpose().matvec(&subselect(&x, i, 2).unwrap()).unwrap())
        });
        assert_eq!(sum, x);
    }

    #[test]
    fn blocks_satisfy_descending_invariant() {
        let g: TargetNetwork<f64> = sample_target(4, 1, 30).unwrap();
        let (f, report) = construct_deep(&g, 2, 31).unwrap();
        assert_eq!(report.layers.len(), 2);
        let layer = &f.layers[0];
        let target = g.layers[0].effective_weight();
        for i in 0..2 {
            let mut chain = layer.output_weight.clone();
            for j in (i..2).rev() {
                let (gamma, _) = layer.blocks[j].norm.folded();
                chain = chain.scale_cols(&gamma).unwrap().matmul(&layer.blocks[j].weight).unwrap();
            }
            let realized = chain.matmul(&layer.blocks[i].projection).unwrap();
            let slice = target.col_range(2 * i, 2 * i + 2);
            assert!(realized.sub(&slice).unwrap().frobenius_norm() <= 1e-9);
        }
    }

    #[test]
    fn deep_matches_target_for_every_chunk() {
        let g: TargetNetwork<f64> = sample_target(6, 2, 40).unwrap();
        for k in [1, 2, 3, 4, 6] {
            let (f, report) = construct_deep(&g, k, 41).unwrap();
            assert!(max_error(|x| f.forward(x).unwrap(), &g, 300, 42) <= 1e-7, "k = {k}");
            assert!(report.min_abs_gamma() > ZERO_SCALE_TOLERANCE);
            assert!(report.layers.iter().all(|l| l.min_margin >= 1e-3 - 1e-9));
        }
    }

    #[test]
    fn single_chunk_agrees_with_wide() {
        let g: TargetNetwork<f64> = sample_target(3, 2, 50).unwrap();
        let (deep, report) = construct_deep(&g, 3, 51).unwrap();
        assert_eq!(report.layers.len(), 2);
        let (wide, _) = construct_wide(&g, 52).unwrap();
        let mut rng = seeded_rng(53);
        for _ in 0..200 {
            let x = unit_ball_sample(&mut rng, 3, 1.0);
            let a = deep.forward(&x).unwrap();
            let b = wide.forward(&x).unwrap();
            assert!(vector::max_abs_diff(&a, &b) <= 1e-8);
        }
    }

    #[test]
    fn rejects_non_square_layers_and_bad_chunks() {
        let mut g: TargetNetwork<f64> = sample_target(3, 1, 0).unwrap();
        assert!(construct_deep(&g, 4, 0).is_err());
        assert!(construct_deep(&g, 0, 0).is_err());
        g.layers.push(crate::netmodel::TargetLayer::affine(Matrix::filled(1, 3, 1.0), vec![0.0]).unwrap());
        assert!(construct_deep(&g, 1, 0).is_err());
    }

    #[test]
    fn zero_target_triggers_resampling_then_fails() {
        let g = TargetNetwork::new(
            2,
            vec![crate::netmodel::TargetLayer::affine(Matrix::<f64>::zeros(2, 2), vec![0.0; 2]).unwrap()],
        )
        .unwrap();
        let cfg = ConstructConfig {
            max_resamples: 2,
            dist: WeightDist::Uniform,
            ..ConstructConfig::default()
        };
        assert!(matches!(
            construct_deep_with(&g, 1, 3, &cfg),
            Err(Error::ZeroScaleEntry { layer: 0, block: 1, .. })
        ));
    }
}
