//! Width construction: every target layer `x ↦ Γ*W̄x + β*` is realized by a
//! frozen pair `W_even · ReLU(Γ_odd W_odd x + β_odd)` whose hidden width is
//! `out·in` (`d²` for square layers), plus the low-rank variant that goes
//! through an SVD factorization of `Γ*W̄`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{
    propagate_bound_from, FrozenLayer, FrozenWideStack, TargetLayer, TargetNetwork,
};
use crate::report::{LayerReport, ReconstructionReport, SolveDiagnostics};
use crate::rng::WeightDist;
use crate::scalar::Real;
use crate::tensor::products::khatri_rao;
use crate::tensor::solve::{numerical_rank, solve_system, svd_factor, Classification, SolveOutcome};
use crate::tensor::{vector, Matrix};

pub const DEFAULT_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstructConfig {
    /// Lower bound enforced on every linearized pre-activation.
    pub margin: f64,
    /// Radius of the input ball the equivalence must hold on.
    pub input_radius: f64,
    /// Accept the pseudo-inverse solution of rank-deficient or
    /// overdetermined systems instead of failing.
    pub allow_pinv_fallback: bool,
    pub dist: WeightDist,
    /// Fresh frozen draws allowed per target layer after a zero solved scale or
    /// an inaccurate block solve (deep construction).
    pub max_resamples: usize,
}

impl Default for ConstructConfig {
    fn default() -> Self {
        ConstructConfig {
            margin: DEFAULT_MARGIN,
            input_radius: 1.0,
            allow_pinv_fallback: false,
            dist: WeightDist::Uniform,
            max_resamples: 64,
        }
    }
}

/// Solution of `c · diag(x) · b = w` through `khatri_rao(c, bᵀ) x = vec(w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalSolve<T> {
    pub outcome: SolveOutcome<T>,
    /// The unique solution, or the pseudo-inverse solution when the outcome
    /// is not `Unique`.
    pub x: Vec<T>,
    /// `‖c · diag(x) · b − w‖_F`.
    pub residual: T,
}

impl<T: Real> DiagonalSolve<T> {
    pub fn is_unique(&self) -> bool {
        self.outcome.classification == Classification::Unique
    }
}

/// Solves for the diagonal `x` in `c · diag(x) · b = w` with `c` of shape
/// `n×h`, `b` of shape `h×m` and `w` of shape `n×m` (`h = nm` gives a square
/// system).
pub fn solve_diagonal_system<T: Real>(
    c: &Matrix<T>,
    b: &Matrix<T>,
    w: &Matrix<T>,
) -> Result<DiagonalSolve<T>> {
    if c.cols() != b.rows() || w.shape() != (c.rows(), b.cols()) {
        return Err(Error::shape(
            "solve_diagonal_system",
            format!(
                "c {}x{}, b {}x{}, w {}x{}",
                c.rows(),
                c.cols(),
                b.rows(),
                b.cols(),
                w.rows(),
                w.cols()
            ),
        ));
    }
    let system = khatri_rao(c, &b.transpose())?;
    let outcome = solve_system(&system, &w.vec())?;
    let x = match &outcome.solution {
        Some(x) => x.clone(),
        None => crate::tensor::solve::pinv_solve(&system, &w.vec())?,
    };
    let realized = c.scale_cols(&x)?.matmul(b)?;
    let residual = realized.sub(w)?.frobenius_norm();
    Ok(DiagonalSolve { outcome, x, residual })
}

/// Shifts that keep `γ_u ⟨w_u, x⟩ + β_u ≥ margin` for all `‖x‖ ≤ input_radius`.
pub fn linearize_shift<T: Real>(gamma: &[T], w: &Matrix<T>, input_radius: T, margin: T) -> Vec<T> {
    w.row_norms()
        .into_iter()
        .zip(gamma)
        .map(|(n, g)| g.abs() * n * input_radius + margin)
        .collect()
}

/// Smallest certified pre-activation `β_u − |γ_u| ‖w_u‖ r` over all units.
fn certified_margin<T: Real>(gamma: &[T], beta: &[T], w: &Matrix<T>, input_radius: T) -> T {
    w.row_norms()
        .into_iter()
        .zip(gamma.iter().zip(beta))
        .map(|(n, (g, b))| *b - g.abs() * n * input_radius)
        .fold(T::infinity(), T::min)
}

/// Folded normalization values for one frozen layer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LayerPairSolution<T> {
    pub gamma_odd: Vec<T>,
    pub beta_odd: Vec<T>,
    pub gamma_even: Vec<T>,
    pub beta_even: Vec<T>,
    pub diagnostics: SolveDiagnostics,
    pub min_margin: T,
}

impl<T: Real> LayerPairSolution<T> {
    /// Writes the solution into the normalization layers of `odd` and `even`.
    pub fn apply_to(&self, odd: &mut FrozenLayer<T>, even: &mut FrozenLayer<T>) -> Result<()> {
        odd.norm.set_folded(&self.gamma_odd, &self.beta_odd)?;
        even.norm.set_folded(&self.gamma_even, &self.beta_even)
    }

    fn layer_report(&self, layer: usize, stage: Option<usize>, input_radius: T) -> LayerReport {
        LayerReport {
            layer,
            block: None,
            stage,
            solve: self.diagnostics.clone(),
            min_margin: self.min_margin.to_f64_lossy(),
            input_radius: input_radius.to_f64_lossy(),
            min_abs_gamma: min_abs(&self.gamma_odd),
        }
    }
}

pub(crate) fn min_abs<T: Real>(v: &[T]) -> f64 {
    v.iter()
        .map(|g| g.abs().to_f64_lossy())
        .fold(f64::INFINITY, f64::min)
}

/// Realizes `x ↦ Γ*W̄x + β*` on `‖x‖ ≤ input_radius` with the frozen pair
/// (`w_odd`: `h×in`, `w_even`: `out×h`).
pub fn construct_layer_pair<T: Real>(
    target: &TargetLayer<T>,
    w_odd: &Matrix<T>,
    w_even: &Matrix<T>,
    input_radius: T,
    cfg: &ConstructConfig,
) -> Result<LayerPairSolution<T>> {
    target.validate()?;
    let (n_out, n_in) = target.weight.shape();
    let h = w_odd.rows();
    if w_odd.cols() != n_in || w_even.shape() != (n_out, h) {
        return Err(Error::shape(
            "construct_layer_pair",
            format!(
                "target {n_out}x{n_in} with frozen {}x{} and {}x{}",
                w_odd.rows(),
                w_odd.cols(),
                w_even.rows(),
                w_even.cols()
            ),
        ));
    }
    let solved = solve_diagonal_system(w_even, w_odd, &target.effective_weight())?;
    let tol = T::lit(1e-8) * (T::one() + target.effective_weight().frobenius_norm());
    let accepted = solved.is_unique() && solved.residual <= tol;
    if !accepted && !cfg.allow_pinv_fallback {
        return Err(Error::SystemSingular {
            layer: 0,
            block: None,
            condition: solved.outcome.condition_estimate.to_f64_lossy(),
        });
    }
    if !vector::all_finite(&solved.x) {
        return Err(Error::NonFinite("construct_layer_pair"));
    }
    let gamma_odd = solved.x;
    let margin = T::lit(cfg.margin);
    let beta_odd = linearize_shift(&gamma_odd, w_odd, input_radius, margin);
    let beta_even = vector::sub(&target.shift, &w_even.matvec(&beta_odd)?);
    let min_margin = certified_margin(&gamma_odd, &beta_odd, w_odd, input_radius);
    Ok(LayerPairSolution {
        gamma_odd,
        beta_odd,
        gamma_even: vec![T::one(); n_out],
        beta_even,
        diagnostics: SolveDiagnostics {
            classification: solved.outcome.classification,
            residual: solved.residual.to_f64_lossy(),
            condition_estimate: solved.outcome.condition_estimate.to_f64_lossy(),
            pinv_fallback: !accepted,
        },
        min_margin,
    })
}

pub(crate) fn at_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::SystemSingular {
            block, condition, ..
        } => Error::SystemSingular {
            layer,
            block,
            condition,
        },
        other => other,
    }
}

/// Frozen widths `[d_0, h_1, d_1, h_2, d_2, …]` with `h_i = d_i · d_{i−1}`.
pub fn wide_widths<T: Real>(g: &TargetNetwork<T>) -> Vec<usize> {
    let mut widths = vec![g.input_dim];
    for layer in &g.layers {
        widths.push(layer.out_dim() * layer.in_dim());
        widths.push(layer.out_dim());
    }
    widths
}

/// Solves every layer pair of an already sampled frozen stack. The stack must
/// have two layers per target layer with matching outer widths.
pub fn construct_on_stack<T: Real>(
    g: &TargetNetwork<T>,
    mut stack: FrozenWideStack<T>,
    cfg: &ConstructConfig,
    report: &mut ReconstructionReport,
) -> Result<FrozenWideStack<T>> {
    g.validate()?;
    if stack.layers.len() != 2 * g.depth() || stack.input_dim != g.input_dim {
        return Err(Error::shape(
            "construct_wide",
            format!(
                "{} frozen layers for {} target layers",
                stack.layers.len(),
                g.depth()
            ),
        ));
    }
    let bound = propagate_bound_from(g, T::lit(cfg.input_radius))?;
    for (i, target) in g.layers.iter().enumerate() {
        let radius = bound.layer_input(i);
        let (head, tail) = stack.layers.split_at_mut(2 * i + 1);
        let odd = &mut head[2 * i];
        let even = &mut tail[0];
        let solution = construct_layer_pair(target, &odd.weight, &even.weight, radius, cfg)
            .map_err(|e| at_layer(e, i))?;
        solution.apply_to(odd, even)?;
        report.layers.push(solution.layer_report(i, None, radius));
    }
    report.trainable_parameters = stack.trainable_parameters();
    report.frozen_parameters = stack.frozen_parameters();
    Ok(stack)
}

pub fn construct_wide<T: Real>(
    g: &TargetNetwork<T>,
    seed: u64,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    construct_wide_with(g, seed, &ConstructConfig::default())
}

pub fn construct_wide_with<T: Real>(
    g: &TargetNetwork<T>,
    seed: u64,
    cfg: &ConstructConfig,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    g.validate()?;
    let stack = FrozenWideStack::sample(&wide_widths(g), cfg.dist, seed)?;
    let mut report = ReconstructionReport::new("wide", seed);
    let stack = construct_on_stack(g, stack, cfg, &mut report)?;
    Ok((stack, report))
}

/// Frozen widths for the low-rank construction: four layers per target layer,
/// `[.., d·r, r, d·r, d, ..]`.
pub fn lowrank_widths<T: Real>(g: &TargetNetwork<T>, r: usize) -> Vec<usize> {
    let mut widths = vec![g.input_dim];
    for layer in &g.layers {
        widths.extend([layer.in_dim() * r, r, r * layer.out_dim(), layer.out_dim()]);
    }
    widths
}

pub fn construct_lowrank<T: Real>(
    g: &TargetNetwork<T>,
    r: usize,
    seed: u64,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    construct_lowrank_with(g, r, seed, &ConstructConfig::default())
}

/// Factors each `Γ*W̄ = A*B*` with `A*` of width `r`, realizes `z = B*x + s`
/// with a pair whose output stays above the margin (so the following ReLU is
/// inactive), then `A*z + β* − A*s` with a second pair.
pub fn construct_lowrank_with<T: Real>(
    g: &TargetNetwork<T>,
    r: usize,
    seed: u64,
    cfg: &ConstructConfig,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    g.validate()?;
    if r == 0 {
        return Err(Error::InvalidConfig("rank must be at least 1".into()));
    }
    let mut factors = Vec::with_capacity(g.depth());
    for (i, layer) in g.layers.iter().enumerate() {
        let m = layer.effective_weight();
        let rank = numerical_rank(&m)?;
        if rank > r || r > m.rows().min(m.cols()) {
            return Err(Error::RankExceeded {
                layer: i,
                rank,
                requested: r,
            });
        }
        factors.push(svd_factor(&m, r)?);
    }

    let mut stack = FrozenWideStack::sample(&lowrank_widths(g, r), cfg.dist, seed)?;
    let bound = propagate_bound_from(g, T::lit(cfg.input_radius))?;
    let margin = T::lit(cfg.margin);
    let mut report = ReconstructionReport::new("lowrank", seed);

    for (i, (target, (a, b))) in g.layers.iter().zip(&factors).enumerate() {
        let r_in = bound.layer_input(i);
        let s = linearize_shift(&vec![T::one(); r], b, r_in, margin);
        let first = TargetLayer::affine(b.clone(), s.clone())?;
        let z_radius = b.operator_norm()? * r_in + vector::norm2(&s);
        let second = TargetLayer::affine(a.clone(), vector::sub(&target.shift, &a.matvec(&s)?))?;

        for (stage, (part, radius)) in [(first, r_in), (second, z_radius)].into_iter().enumerate() {
            let base = 4 * i + 2 * stage;
            let (head, tail) = stack.layers.split_at_mut(base + 1);
            let odd = &mut head[base];
            let even = &mut tail[0];
            let solution = construct_layer_pair(&part, &odd.weight, &even.weight, radius, cfg)
                .map_err(|e| at_layer(e, i))?;
            solution.apply_to(odd, even)?;
            let mut entry = solution.layer_report(i, Some(stage), radius);
            if stage == 0 {
                entry.min_margin = entry.min_margin.min(margin.to_f64_lossy());
            }
            report.layers.push(entry);
        }
    }
    report.trainable_parameters = stack.trainable_parameters();
    report.frozen_parameters = stack.frozen_parameters();
    Ok((stack, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{sample_target, sample_target_with_rank};
    use crate::rng::{seeded_rng, unit_ball_sample};

    fn max_error(f: &FrozenWideStack<f64>, g: &TargetNetwork<f64>, n: usize, seed: u64) -> f64 {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                let x = unit_ball_sample(&mut rng, g.input_dim, 1.0);
                vector::max_abs_diff(&f.forward(&x).unwrap(), &g.forward(&x).unwrap())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn scalar_diagonal_system() {
        let c = Matrix::new(1, 1, vec![2.0f64]).unwrap();
        let b = Matrix::new(1, 1, vec![3.0]).unwrap();
        let w = Matrix::new(1, 1, vec![12.0]).unwrap();
        let s = solve_diagonal_system(&c, &b, &w).unwrap();
        assert!(s.is_unique());
        assert!((s.x[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn identity_producing_pair_gives_vec_w() {
        // c = block pattern of ones, bᵀ = [I_m | … | I_m] makes the system the identity.
        let (n, m) = (2, 3);
        let c = Matrix::from_fn(n, n * m, |i, j| if j / m == i { 1.0 } else { 0.0 });
        let b = Matrix::from_fn(n * m, m, |j, l| if j % m == l { 1.0 } else { 0.0 });
        let w = Matrix::from_fn(n, m, |i, j| (i * m + j) as f64 - 2.5);
        let s = solve_diagonal_system(&c, &b, &w).unwrap();
        assert!(vector::max_abs_diff(&s.x, &w.vec()) < 1e-14);
    }

    #[test]
    fn random_diagonal_system_substitutes_back() {
        let mut rng = seeded_rng(12);
        let (n, m) = (3, 2);
        let c: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, n, n * m);
        let b: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, n * m, m);
        let w: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, n, m);
        let s = solve_diagonal_system(&c, &b, &w).unwrap();
        let back = c.scale_cols(&s.x).unwrap().matmul(&b).unwrap();
        assert!(back.sub(&w).unwrap().frobenius_norm() <= 1e-10);
    }

    #[test]
    fn diagonal_system_shape_errors() {
        let c = Matrix::<f64>::zeros(2, 4);
        let b = Matrix::<f64>::zeros(3, 2);
        assert!(solve_diagonal_system(&c, &b, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn linearize_examples() {
        let w = Matrix::<f64>::identity(3);
        assert_eq!(linearize_shift(&[0.0; 3], &w, 1.0, 0.25), vec![0.25; 3]);

        let w = Matrix::new(1, 1, vec![1.0f64]).unwrap();
        let beta = linearize_shift(&[1.0], &w, 1.0, 0.1);
        assert!((beta[0] - 1.1).abs() < 1e-15);
        for x in [-1.0, -0.5, 0.0, 1.0] {
            assert!(x + beta[0] >= 0.1 - 1e-15);
        }
    }

    #[test]
    fn linearized_preactivations_stay_above_margin() {
        let mut rng = seeded_rng(3);
        let w: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, 6, 4);
        let gamma: Vec<f64> = crate::rng::uniform_vec(&mut rng, 6, -2.0, 2.0);
        let beta = linearize_shift(&gamma, &w, 1.5, 1e-3);
        for _ in 0..10_000 {
            let x = unit_ball_sample(&mut rng, 4, 1.5);
            let z = w.matvec(&x).unwrap();
            for u in 0..6 {
                assert!(gamma[u] * z[u] + beta[u] >= 1e-3 - 1e-12);
            }
        }
    }

    #[test]
    fn scalar_layer_pair() {
        let target = TargetLayer::new(vec![2.0f64], Matrix::new(1, 1, vec![3.0]).unwrap(), vec![0.0]).unwrap();
        let w_odd = Matrix::new(1, 1, vec![2.0]).unwrap();
        let w_even = Matrix::new(1, 1, vec![3.0]).unwrap();
        let s = construct_layer_pair(&target, &w_odd, &w_even, 1.0, &ConstructConfig::default()).unwrap();
        assert!((s.gamma_odd[0] - 1.0).abs() < 1e-14);
        assert_eq!(s.gamma_even, vec![1.0]);
    }

    #[test]
    fn zero_target_gives_zero_scales() {
        let mut rng = seeded_rng(5);
        let d = 3;
        let target = TargetLayer::affine(Matrix::<f64>::zeros(d, d), vec![0.5, -0.25, 0.0]).unwrap();
        let w_odd = WeightDist::Uniform.matrix(&mut rng, d * d, d);
        let w_even = WeightDist::Uniform.matrix(&mut rng, d, d * d);
        let s = construct_layer_pair(&target, &w_odd, &w_even, 1.0, &ConstructConfig::default()).unwrap();
        assert!(s.gamma_odd.iter().all(|g| g.abs() < 1e-12));
        assert!(s.beta_odd.iter().all(|b| (b - 1e-3).abs() < 1e-12));
    }

    #[test]
    fn scalar_network_chain() {
        let g = TargetNetwork::new(
            1,
            vec![TargetLayer::new(vec![1.5], Matrix::new(1, 1, vec![-0.8]).unwrap(), vec![0.3]).unwrap()],
        )
        .unwrap();
        let (f, report) = construct_wide(&g, 1).unwrap();
        assert_eq!(f.layers.len(), 2);
        assert_eq!(report.layers.len(), 1);
        for x in [-1.0f64, -0.3, 0.0, 0.9, 1.0] {
            assert!((f.forward(&[x]).unwrap()[0] - (1.5 * -0.8 * x + 0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn wide_reconstructs_sampled_targets() {
        let g: TargetNetwork<f64> = sample_target(8, 2, 17).unwrap();
        let (f, report) = construct_wide(&g, 18).unwrap();
        assert!(max_error(&f, &g, 1000, 19) <= 1e-7);
        assert!(report.layers.iter().all(|l| l.min_margin >= 1e-3 - 1e-12));
        assert!(!report.used_pinv());
    }

    #[test]
    fn rectangular_layers_are_supported() {
        let mut g: TargetNetwork<f64> = sample_target(4, 1, 2).unwrap();
        g.layers.push(TargetLayer::affine(Matrix::filled(1, 4, 1.0), vec![0.0]).unwrap());
        let (f, _) = construct_wide(&g, 3).unwrap();
        assert_eq!(f.output_dim(), 1);
        assert!(max_error(&f, &g, 500, 4) <= 1e-8);
    }

    #[test]
    fn lowrank_examples() {
        let g: TargetNetwork<f64> = sample_target_with_rank(4, 1, 1, 6).unwrap();
        let (f, report) = construct_lowrank(&g, 1, 7).unwrap();
        assert_eq!(report.layers.len(), 2);
        assert!(max_error(&f, &g, 1000, 8) <= 1e-7);

        let full: TargetNetwork<f64> = sample_target(3, 2, 9).unwrap();
        let (f, _) = construct_lowrank(&full, 3, 10).unwrap();
        assert!(max_error(&f, &full, 500, 11) <= 1e-7);

        let g2: TargetNetwork<f64> = sample_target_with_rank(5, 1, 2, 12).unwrap();
        assert!(matches!(
            construct_lowrank(&g2, 1, 13),
            Err(Error::RankExceeded { rank: 2, requested: 1, .. })
        ));
    }

    #[test]
    fn singular_frozen_pair_is_reported() {
        let target = TargetLayer::affine(Matrix::<f64>::identity(2), vec![0.0; 2]).unwrap();
        let w_odd = Matrix::<f64>::filled(4, 2, 1.0);
        let w_even = Matrix::<f64>::filled(2, 4, 1.0);
        let err = construct_layer_pair(&target, &w_odd, &w_even, 1.0, &ConstructConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SystemSingular { .. }));
        let cfg = ConstructConfig {
            allow_pinv_fallback: true,
            ..ConstructConfig::default()
        };
        let s = construct_layer_pair(&target, &w_odd, &w_even, 1.0, &cfg).unwrap();
        assert!(s.diagnostics.pinv_fallback);
    }
}
