//! Sparse frozen weights: Bernoulli masks applied by Hadamard product, the
//! Boolean-determinant test for invertibility of sparse Khatri-Rao systems,
//! and Monte-Carlo singularity rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{FrozenWideStack, TargetNetwork};
use crate::report::{MaskReport, ReconstructionReport};
use crate::rng::{bernoulli, derive_seed, seeded_rng, WeightDist};
use crate::scalar::Real;
use crate::tensor::boolean::{boolean_det_bits, BoolMatrix};
use crate::tensor::products::{hadamard, khatri_rao};
use crate::tensor::solve::numerical_rank;
use crate::tensor::Matrix;
use crate::wide::{construct_on_stack, wide_widths, ConstructConfig};

/// Stream offset separating mask draws from frozen-weight draws.
const MASK_STREAM: u64 = 0x6d61_736b;

/// Boolean mask with i.i.d. Bernoulli(`p`) entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMask {
    pub bits: BoolMatrix,
    pub p: f64,
    pub seed: u64,
}

impl SparseMask {
    pub fn sample(rows: usize, cols: usize, p: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        SparseMask {
            bits: BoolMatrix::from_fn(rows, cols, |_, _| bernoulli(&mut rng, p)),
            p,
            seed,
        }
    }

    pub fn from_bits(bits: BoolMatrix) -> Self {
        let p = bits.density();
        SparseMask { bits, p, seed: 0 }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.bits.rows(), self.bits.cols())
    }

    pub fn density(&self) -> f64 {
        self.bits.density()
    }

    /// The Ω₀ event: an all-zero row or column.
    pub fn has_zero_line(&self) -> bool {
        self.bits.has_zero_row() || self.bits.has_zero_col()
    }
}

/// `p = min(1, √(2·d·q))` with `q = cbar · ln(d²) / d²`.
pub fn choose_sparsity(d: usize, cbar: f64) -> f64 {
    let n = (d * d) as f64;
    let q = cbar * n.ln() / n;
    (2.0 * d as f64 * q).sqrt().min(1.0)
}

pub fn sparsify<T: Real>(w: &Matrix<T>, mask: &SparseMask) -> Result<Matrix<T>> {
    hadamard(w, &mask.bits.to_matrix())
}

/// Returns `(det_nonzero, bool_det)`: whether `khatri_rao(P⊙M₁, Q⊙M₂)` has
/// full numerical rank, and the Boolean determinant of the Boolean
/// Khatri-Rao product of the masks.
pub fn check_boolean_equivalence<T: Real>(
    p_mat: &Matrix<T>,
    q_mat: &Matrix<T>,
    m1: &SparseMask,
    m2: &SparseMask,
) -> Result<(bool, bool)> {
    let system = khatri_rao(&sparsify(p_mat, m1)?, &sparsify(q_mat, m2)?)?;
    if !system.is_square() {
        return Err(Error::shape(
            "check_boolean_equivalence",
            format!("Khatri-Rao product is {}x{}", system.rows(), system.cols()),
        ));
    }
    let det_nonzero = numerical_rank(&system)? == system.rows();
    let bool_det = boolean_det_bits(&m1.bits.khatri_rao(&m2.bits)?)?;
    Ok((det_nonzero, bool_det))
}

/// Two-sided 95% Wilson score interval for `failures` out of `trials`.
pub fn wilson_interval(failures: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let n = trials as f64;
    let phat = failures as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (phat + z * z / (2.0 * n)) / denom;
    let half = z / denom * (phat * (1.0 - phat) / n + z * z / (4.0 * n * n)).sqrt();
    ((center - half).clamp(0.0, phat), (center + half).clamp(phat, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityEstimate {
    pub dim: usize,
    pub p: f64,
    pub trials: usize,
    pub failures: usize,
    pub rate: f64,
    pub wilson_interval: (f64, f64),
    /// Trials in which some mask had an all-zero row or column.
    pub zero_line_events: usize,
}

impl SingularityEstimate {
    fn from_counts(dim: usize, p: f64, trials: usize, failures: usize, zero_line_events: usize) -> Self {
        SingularityEstimate {
            dim,
            p,
            trials,
            failures,
            rate: if trials == 0 { 0.0 } else { failures as f64 / trials as f64 },
            wilson_interval: wilson_interval(failures, trials),
            zero_line_events,
        }
    }
}

/// One singularity trial: two `d×d²` matrices drawn from `dist`, masked with
/// Bernoulli(`p`), tested for a singular Khatri-Rao product.
fn singularity_trial(d: usize, p: f64, dist: WeightDist, seed: u64) -> Result<(bool, bool)> {
    let mut rng = seeded_rng(seed);
    let a: Matrix<f64> = dist.matrix(&mut rng, d, d * d);
    let b: Matrix<f64> = dist.matrix(&mut rng, d, d * d);
    let m1 = SparseMask::sample(d, d * d, p, derive_seed(seed, 1));
    let m2 = SparseMask::sample(d, d * d, p, derive_seed(seed, 2));
    let zero_line = m1.has_zero_line() || m2.has_zero_line();
    let system = khatri_rao(&sparsify(&a, &m1)?, &sparsify(&b, &m2)?)?;
    let singular = zero_line || numerical_rank(&system)? < d * d;
    Ok((singular, zero_line))
}

pub fn estimate_singularity_rate(d: usize, p: f64, trials: usize, seed: u64) -> Result<SingularityEstimate> {
    estimate_singularity_rate_with(d, p, trials, seed, WeightDist::Uniform)
}

/// Monte-Carlo estimate of the probability that the Khatri-Rao product of two
/// Bernoulli(`p`)-sparsified random `d×d²` matrices is singular. Trials run
/// in parallel, trial `t` seeded by `derive_seed(seed, t)`.
pub fn estimate_singularity_rate_with(
    d: usize,
    p: f64,
    trials: usize,
    seed: u64,
    dist: WeightDist,
) -> Result<SingularityEstimate> {
    if d == 0 || !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("need d ≥ 1 and p in [0, 1], got d={d}, p={p}")));
    }
    let outcomes: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| singularity_trial(d, p, dist, derive_seed(seed, t as u64)))
        .collect::<Result<_>>()?;
    let failures = outcomes.iter().filter(|o| o.0).count();
    let zero_lines = outcomes.iter().filter(|o| o.1).count();
    Ok(SingularityEstimate::from_counts(d, p, trials, failures, zero_lines))
}

/// Result of scanning `cbar` upward until the singularity rate is certified
/// below a target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbarCalibration {
    pub dim: usize,
    pub cbar: f64,
    pub p: f64,
    pub target_rate: f64,
    /// Whether some grid point met the target.
    pub certified: bool,
    /// Every grid point evaluated, in scan order.
    pub scanned: Vec<(f64, SingularityEstimate)>,
}

/// Smallest `cbar` in `grid` (scanned in ascending order) whose singularity
/// estimate has Wilson upper bound at most `target_rate`. Falls back to the
/// last grid point, uncertified, when none qualifies.
pub fn calibrate_cbar(
    d: usize,
    grid: &[f64],
    trials: usize,
    target_rate: f64,
    seed: u64,
) -> Result<CbarCalibration> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty cbar grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut scanned = Vec::new();
    for (i, &cbar) in sorted.iter().enumerate() {
        let p = choose_sparsity(d, cbar);
        let estimate = estimate_singularity_rate(d, p, trials, derive_seed(seed, i as u64))?;
        let certified = estimate.wilson_interval.1 <= target_rate;
        scanned.push((cbar, estimate));
        if certified {
            return Ok(CbarCalibration {
                dim: d,
                cbar,
                p,
                target_rate,
                certified,
                scanned,
            });
        }
    }
    let cbar = *sorted.last().expect("nonempty grid");
    Ok(CbarCalibration {
        dim: d,
        cbar,
        p: choose_sparsity(d, cbar),
        target_rate,
        certified: false,
        scanned,
    })
}

/// Masks every frozen weight of `stack` with Bernoulli(`p`); mask `i` is
/// drawn from `derive_seed(seed, MASK_STREAM + i)`.
pub fn sparsify_stack<T: Real>(stack: &mut FrozenWideStack<T>, p: f64, seed: u64) -> Result<Vec<SparseMask>> {
    let mut masks = Vec::with_capacity(stack.layers.len());
    for (i, layer) in stack.layers.iter_mut().enumerate() {
        let (rows, cols) = layer.weight.shape();
        let mask = SparseMask::sample(rows, cols, p, derive_seed(seed, MASK_STREAM + i as u64));
        layer.weight = sparsify(&layer.weight, &mask)?;
        masks.push(mask);
    }
    Ok(masks)
}

pub fn construct_sparse<T: Real>(
    g: &TargetNetwork<T>,
    p: f64,
    seed: u64,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    construct_sparse_with(g, p, seed, &ConstructConfig::default())
}

/// The wide construction on Bernoulli(`p`)-masked frozen weights. The frozen
/// draw is the same as [`construct_wide`](crate::wide::construct_wide) for the
/// same seed, so `p = 1` reproduces it exactly.
pub fn construct_sparse_with<T: Real>(
    g: &TargetNetwork<T>,
    p: f64,
    seed: u64,
    cfg: &ConstructConfig,
) -> Result<(FrozenWideStack<T>, ReconstructionReport)> {
    let (stack, report, result) = sparse_attempt(g, p, seed, cfg)?;
    result.map(|()| (stack, report))
}

/// Like [`construct_sparse_with`] but always returns the mask report; the
/// construction error, if any, is in the third element.
pub fn sparse_attempt<T: Real>(
    g: &TargetNetwork<T>,
    p: f64,
    seed: u64,
    cfg: &ConstructConfig,
) -> Result<(FrozenWideStack<T>, ReconstructionReport, Result<()>)> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidConfig(format!("sparsity must lie in (0, 1], got {p}")));
    }
    g.validate()?;
    let mut stack = FrozenWideStack::sample(&wide_widths(g), cfg.dist, seed)?;
    let masks = sparsify_stack(&mut stack, p, seed)?;
    let mut report = ReconstructionReport::new("sparse", seed);
    report.sparsity = Some(p);
    for i in 0..g.depth() {
        let (odd, even) = (&stack.layers[2 * i], &stack.layers[2 * i + 1]);
        let system = khatri_rao(&even.weight, &odd.weight.transpose())?;
        let invertible = system.is_square() && numerical_rank(&system)? == system.rows();
        report.masks.push(MaskReport {
            layer: i,
            odd_density: masks[2 * i].density(),
            even_density: masks[2 * i + 1].density(),
            zero_line: masks[2 * i].has_zero_line() || masks[2 * i + 1].has_zero_line(),
            invertible,
        });
    }
    let result = match construct_on_stack(g, stack.clone(), cfg, &mut report) {
        Ok(solved) => {
            stack = solved;
            Ok(())
        }
        Err(e) => Err(e),
    };
    Ok((stack, report, result))
}

/// Union bound on the probability that some of `layers` layer systems is
/// singular, given a per-layer rate.
pub fn union_bound(per_layer_rate: f64, layers: usize) -> f64 {
    (per_layer_rate * layers as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::sample_target;
    use crate::wide::construct_wide;

    #[test]
    fn sparsity_formula() {
        let q: f64 = 16f64.ln() / 16.0;
        assert!((q - 0.1733).abs() < 1e-4);
        assert_eq!(choose_sparsity(4, 1.0), 1.0);
        let p16 = choose_sparsity(16, 1.0);
        assert!((p16 - (2.0 * 16.0 * 256f64.ln() / 256.0).sqrt()).abs() < 1e-15);
        assert!(p16 < 1.0);
        assert_eq!(choose_sparsity(2, 100.0), 1.0);
    }

    #[test]
    fn sparsity_scales_like_sqrt_log_over_d() {
        let d = 1_000_000usize;
        let ratio = choose_sparsity(4 * d, 1.0) / choose_sparsity(d, 1.0);
        let expect = 0.5 * ((4.0 * d as f64).ln() / (d as f64).ln()).sqrt();
        assert!((ratio - expect).abs() < 1e-12);
    }

    #[test]
    fn sparsify_examples() {
        let w = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        assert_eq!(sparsify(&w, &SparseMask::sample(3, 4, 1.0, 0)).unwrap(), w);
        let zero = SparseMask::from_bits(BoolMatrix::zeros(3, 4));
        assert_eq!(sparsify(&w, &zero).unwrap(), Matrix::zeros(3, 4));
        let mask = SparseMask::sample(3, 4, 0.5, 9);
        let out = sparsify(&w, &mask).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert_eq!(out.get(i, j) != 0.0, mask.bits.get(i, j) && w.get(i, j) != 0.0);
            }
        }
        assert!(sparsify(&w, &SparseMask::sample(4, 3, 0.5, 0)).is_err());
    }

    #[test]
    fn masks_are_reproducible_with_expected_density() {
        let a = SparseMask::sample(200, 200, 0.3, 5);
        assert_eq!(a, SparseMask::sample(200, 200, 0.3, 5));
        let sd = (0.3f64 * 0.7 / 40_000.0).sqrt();
        assert!((a.density() - 0.3).abs() < 5.0 * sd);
    }

    #[test]
    fn boolean_equivalence_examples() {
        let mut rng = seeded_rng(2);
        let d = 3;
        let p: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, d, d * d);
        let q: Matrix<f64> = WeightDist::Uniform.matrix(&mut rng, d, d * d);
        let ones = SparseMask::from_bits(BoolMatrix::ones(d, d * d));
        assert_eq!(check_boolean_equivalence(&p, &q, &ones, &ones).unwrap(), (true, true));
        let holed = SparseMask::from_bits(BoolMatrix::from_fn(d, d * d, |_, j| j != 4));
        assert_eq!(check_boolean_equivalence(&p, &q, &holed, &ones).unwrap(), (false, false));
    }

    #[test]
    fn wilson_interval_contains_rate() {
        for (f, n) in [(0, 10), (3, 10), (10, 10), (5, 200)] {
            let (lo, hi) = wilson_interval(f, n);
            let rate = f as f64 / n as f64;
            assert!(lo <= rate && rate <= hi);
            assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        }
        let (lo, hi) = wilson_interval(0, 200);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.018_84).abs() < 1e-4);
    }

    #[test]
    fn singularity_rate_limits() {
        let dense = estimate_singularity_rate(3, 1.0, 50, 1).unwrap();
        assert_eq!(dense.failures, 0);
        let empty = estimate_singularity_rate(3, 0.0, 20, 1).unwrap();
        assert_eq!(empty.rate, 1.0);
        let tiny = estimate_singularity_rate(3, 0.02, 50, 1).unwrap();
        assert!(tiny.rate > 0.9);
    }

    #[test]
    fn dense_mask_reproduces_wide_construction() {
        let g: TargetNetwork<f64> = sample_target(3, 2, 4).unwrap();
        let (wide, _) = construct_wide(&g, 21).unwrap();
        let (sparse, report) = construct_sparse(&g, 1.0, 21).unwrap();
        assert_eq!(wide, sparse);
        assert!(report.masks.iter().all(|m| m.invertible && !m.zero_line));
    }

    #[test]
    fn very_sparse_construction_fails_but_reports_masks() {
        let g: TargetNetwork<f64> = sample_target(4, 1, 4).unwrap();
        let (_, report, result) = sparse_attempt(&g, 0.05, 3, &ConstructConfig::default()).unwrap();
        assert!(matches!(result, Err(Error::SystemSingular { layer: 0, .. })));
        assert_eq!(report.masks.len(), 1);
        assert!(report.masks[0].zero_line);
        assert!(!report.masks[0].invertible);
    }

    #[test]
    fn calibration_stops_at_first_certified_point() {
        let cal = calibrate_cbar(4, &[3.0, 0.01, 2.0], 30, 0.2, 5).unwrap();
        assert!(cal.certified);
        assert!(cal.scanned.windows(2).all(|w| w[0].0 < w[1].0));
        let (last_cbar, last) = cal.scanned.last().unwrap();
        assert_eq!(*last_cbar, cal.cbar);
        assert!(last.wilson_interval.1 <= 0.2);
        assert!(cal.scanned[..cal.scanned.len() - 1].iter().all(|(_, e)| e.wilson_interval.1 > 0.2));
    }

    #[test]
    fn union_bound_caps_at_one() {
        assert_eq!(union_bound(0.01, 5), 0.05);
        assert_eq!(union_bound(0.5, 5), 1.0);
    }
}
