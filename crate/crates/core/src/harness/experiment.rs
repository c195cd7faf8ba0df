use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{sample_target, FrozenWideStack, TargetLayer, TargetNetwork};
use crate::report::ReconstructionReport;
use crate::rng::{derive_seed, normal_vec, seeded_rng, WeightDist};
use crate::sparse::sparsify_stack;
use crate::tensor::Matrix;
use crate::wide::{construct_on_stack, ConstructConfig};

use super::sgd::{gradient_gate, mse, sgd_train_bn, sgd_train_dense, Dataset, GateReport, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// SGD on the normalization parameters of the frozen student.
    SgdBn,
    /// The wide construction applied to the teacher itself.
    ConstructFromTeacher,
    /// The wide construction applied to a dense network fitted by SGD.
    ConstructFromLearned,
    /// The dense SGD-fitted network itself; reported alongside
    /// `construct_from_learned`.
    SgdDense,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::SgdBn,
        Algorithm::ConstructFromTeacher,
        Algorithm::ConstructFromLearned,
        Algorithm::SgdDense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SgdBn => "sgd_bn",
            Algorithm::ConstructFromTeacher => "construct_from_teacher",
            Algorithm::ConstructFromLearned => "construct_from_learned",
            Algorithm::SgdDense => "sgd_dense",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_depth() -> usize {
    1
}

fn default_sparsity() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

/// A teacher/student sweep: one teacher per seed, one frozen student per
/// (seed, width), each requested algorithm run on that student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub teacher_width: usize,
    /// Hidden layers of the teacher; its output is the sum of the last hidden layer.
    #[serde(default = "default_depth")]
    pub teacher_depth: usize,
    pub student_widths: Vec<usize>,
    /// Density of the frozen student weights; 1 means dense.
    #[serde(default = "default_sparsity")]
    pub sparsity: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub sgd: SgdConfig,
    /// Training settings for the dense student; defaults to `sgd`.
    #[serde(default)]
    pub dense_sgd: Option<SgdConfig>,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub weight_dist: WeightDist,
    /// When false, `wall_time_s` is written as 0 so that output is byte-for-byte reproducible.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    /// Run the finite-difference gradient gate before any training.
    #[serde(default = "default_true")]
    pub gradient_gate: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.teacher_width == 0 || self.teacher_depth == 0 {
            return bad("teacher width and depth must be positive".into());
        }
        if self.student_widths.is_empty() || self.student_widths.contains(&0) {
            return bad("student widths must be nonempty and positive".into());
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return bad(format!("sparsity must lie in (0, 1], got {}", self.sparsity));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.seeds.is_empty() || self.algorithms.is_empty() {
            return bad("at least one seed and one algorithm are required".into());
        }
        self.sgd.validate()?;
        self.dense_config().validate()
    }

    fn dense_config(&self) -> &SgdConfig {
        self.dense_sgd.as_ref().unwrap_or(&self.sgd)
    }

    fn wants(&self, alg: Algorithm) -> bool {
        self.algorithms.contains(&alg)
    }
}

/// One (algorithm, width, seed) measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub width: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub train_mse: f64,
    pub test_mse: f64,
    pub wall_time_s: f64,
}

/// A cell that produced no row, with a short reason code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub algorithm: Algorithm,
    pub width: usize,
    pub sparsity: f64,
    pub seed: u64,
    pub reason: String,
}

/// Trimmed statistics of `test_mse` across seeds for one (algorithm, width, sparsity).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub width: usize,
    pub sparsity: f64,
    pub seeds: usize,
    pub kept: usize,
    pub mean_test_mse: f64,
    pub min_test_mse: f64,
    pub max_test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<FailedCell>,
    pub summary: Vec<AggregateRow>,
    pub gate: Option<GateReport>,
    /// Construction reports keyed by (algorithm, width, seed).
    #[serde(skip)]
    pub reports: Vec<(Algorithm, usize, u64, ReconstructionReport)>,
}

/// Teacher with `depth` random `d×d` hidden layers and an output equal to
/// the sum of the last hidden layer.
pub fn make_teacher(d: usize, depth: usize, seed: u64) -> Result<TargetNetwork<f64>> {
    let mut g = sample_target(d, depth, seed)?;
    g.layers.push(TargetLayer::affine(Matrix::filled(1, d, 1.0), vec![0.0])?);
    g.validate()?;
    Ok(g)
}

/// Frozen widths of a student for a teacher from [`make_teacher`]: each
/// hidden teacher layer becomes a pair `(width, d)` and the output layer a
/// pair `(d, 1)`.
pub fn student_widths(d: usize, depth: usize, width: usize) -> Vec<usize> {
    let mut widths = vec![d];
    for _ in 0..depth {
        widths.extend([width, d]);
    }
    widths.extend([d, 1]);
    widths
}

/// Standard Gaussian inputs labeled by `teacher`.
pub fn make_dataset(teacher: &TargetNetwork<f64>, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let mut rng = seeded_rng(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, teacher.input_dim)).collect();
    let targets = inputs.iter().map(|x| teacher.forward(x)).collect::<Result<_>>()?;
    Ok(Dataset { inputs, targets })
}

/// Mean of `values` after dropping one minimum and one maximum when there
/// are at least three; returns `(mean, min kept, max kept, kept)`.
pub fn trimmed_mean(values: &[f64]) -> (f64, f64, f64, usize) {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept: &[f64] = if sorted.len() >= 3 {
        &sorted[1..sorted.len() - 1]
    } else {
        &sorted
    };
    if kept.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN, 0);
    }
    let mean = kept.iter().sum::<f64>() / kept.len() as f64;
    (mean, kept[0], kept[kept.len() - 1], kept.len())
}

/// Groups rows by (algorithm, width, sparsity) in first-seen order and
/// applies [`trimmed_mean`] to the test errors.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(Algorithm, usize, u64)> = Vec::new();
    for r in rows {
        let key = (r.algorithm, r.width, r.sparsity.to_bits());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(algorithm, width, bits)| {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.width == width && r.sparsity.to_bits() == bits)
                .map(|r| r.test_mse)
                .collect();
            let (mean, lo, hi, kept) = trimmed_mean(&values);
            AggregateRow {
                algorithm,
                width,
                sparsity: f64::from_bits(bits),
                seeds: values.len(),
                kept,
                mean_test_mse: mean,
                min_test_mse: lo,
                max_test_mse: hi,
            }
        })
        .collect()
}

struct SeedContext {
    seed: u64,
    teacher: TargetNetwork<f64>,
    train: Dataset<f64>,
    test: Dataset<f64>,
    radius: f64,
    learned: Option<std::result::Result<(TargetNetwork<f64>, f64), String>>,
}

enum CellResult {
    Row(SweepRow),
    Failed(FailedCell),
}

fn reason(err: &Error) -> String {
    let code = match err {
        Error::SystemSingular { .. } => "system_singular",
        Error::ZeroScaleEntry { .. } => "zero_scale",
        Error::InexactLayer { .. } => "inexact_layer",
        Error::Diverged { .. } => "diverged",
        Error::NonFinite(_) => "non_finite",
        Error::SvdNoConvergence => "svd_no_convergence",
        _ => "error",
    };
    format!("{code}: {err}")
}

fn prepare_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedContext> {
    let d = cfg.teacher_width;
    let teacher = make_teacher(d, cfg.teacher_depth, derive_seed(seed, 0))?;
    let train = make_dataset(&teacher, cfg.n_train, derive_seed(seed, 1))?;
    let test = make_dataset(&teacher, cfg.n_test, derive_seed(seed, 2))?;
    let radius = train.max_input_norm().max(test.max_input_norm());
    let needs_dense = cfg.wants(Algorithm::ConstructFromLearned) || cfg.wants(Algorithm::SgdDense);
    let learned = if needs_dense {
        let start = Instant::now();
        let mut student = make_teacher(d, cfg.teacher_depth, derive_seed(seed, 3))?;
        let curve = sgd_train_dense(&mut student, &train, cfg.dense_config(), derive_seed(seed, 4))?;
        Some(if curve.diverged {
            Err(reason(&Error::Diverged {
                epoch: curve.epoch_losses.len() - 1,
                loss: f64::INFINITY,
            }))
        } else {
            Ok((student, start.elapsed().as_secs_f64()))
        })
    } else {
        None
    };
    Ok(SeedContext {
        seed,
        teacher,
        train,
        test,
        radius,
        learned,
    })
}

fn frozen_student(cfg: &ExperimentConfig, ctx: &SeedContext, width: usize) -> Result<FrozenWideStack<f64>> {
    let widths = student_widths(cfg.teacher_width, cfg.teacher_depth, width);
    let stack_seed = derive_seed(derive_seed(ctx.seed, 5), width as u64);
    let mut stack = FrozenWideStack::sample(&widths, cfg.weight_dist, stack_seed)?;
    if cfg.sparsity < 1.0 {
        sparsify_stack(&mut stack, cfg.sparsity, stack_seed)?;
    }
    Ok(stack)
}

type CellOutput = (Vec<CellResult>, Vec<(Algorithm, usize, u64, ReconstructionReport)>);

fn run_cell(cfg: &ExperimentConfig, ctx: &SeedContext, width: usize) -> Result<CellOutput> {
    let stack = frozen_student(cfg, ctx, width)?;
    let mut results = Vec::new();
    let mut reports = Vec::new();
    let timed = |secs: f64| if cfg.record_wall_time { secs } else { 0.0 };
    let row = |algorithm, train_mse, test_mse, secs| SweepRow {
        algorithm,
        width,
        sparsity: cfg.sparsity,
        seed: ctx.seed,
        train_mse,
        test_mse,
        wall_time_s: timed(secs),
    };
    let failed = |algorithm, reason: String| FailedCell {
        algorithm,
        width,
        sparsity: cfg.sparsity,
        seed: ctx.seed,
        reason,
    };
    let construct_cfg = ConstructConfig {
        input_radius: ctx.radius,
        allow_pinv_fallback: true,
        dist: cfg.weight_dist,
        ..ConstructConfig::default()
    };
    let evaluate = |f: &FrozenWideStack<f64>| -> Result<(f64, f64)> {
        let train = mse(|x| f.forward(x), &ctx.train)?;
        let test = mse(|x| f.forward(x), &ctx.test)?;
        if !(train.is_finite() && test.is_finite()) {
            return Err(Error::NonFinite("student evaluation"));
        }
        Ok((train, test))
    };

    for alg in Algorithm::ALL {
        if !cfg.wants(alg) && !(alg == Algorithm::SgdDense && cfg.wants(Algorithm::ConstructFromLearned)) {
            continue;
        }
        let start = Instant::now();
        let outcome: std::result::Result<(f64, f64), String> = match alg {
            Algorithm::SgdBn => {
                let mut f = stack.clone();
                sgd_train_bn(&mut f, &ctx.train, &cfg.sgd, derive_seed(ctx.seed, 6))
                    .and_then(|curve| {
                        if curve.diverged {
                            Err(Error::Diverged {
                                epoch: curve.epoch_losses.len() - 1,
                                loss: f64::INFINITY,
                            })
                        } else {
                            evaluate(&f)
                        }
                    })
                    .map_err(|e| reason(&e))
            }
            Algorithm::ConstructFromTeacher | Algorithm::ConstructFromLearned => {
                let source = if alg == Algorithm::ConstructFromTeacher {
                    Ok(&ctx.teacher)
                } else {
                    match ctx.learned.as_ref().expect("dense student trained") {
                        Ok((g, _)) => Ok(g),
                        Err(why) => Err(format!("dense_student_{why}")),
                    }
                };
                source.and_then(|g| {
                    let mut report = ReconstructionReport::new(alg.name(), ctx.seed);
                    report.sparsity = Some(cfg.sparsity);
                    let built = construct_on_stack(g, stack.clone(), &construct_cfg, &mut report)
                        .and_then(|f| evaluate(&f));
                    reports.push((alg, width, ctx.seed, report));
                    built.map_err(|e| reason(&e))
                })
            }
            Algorithm::SgdDense => match ctx.learned.as_ref().expect("dense student trained") {
                Ok((g, secs)) => {
                    let train = mse(|x| g.forward(x), &ctx.train)?;
                    let test = mse(|x| g.forward(x), &ctx.test)?;
                    results.push(CellResult::Row(row(alg, train, test, *secs)));
                    continue;
                }
                Err(why) => Err(why.clone()),
            },
        };
        let secs = start.elapsed().as_secs_f64();
        results.push(match outcome {
            Ok((train, test)) => CellResult::Row(row(alg, train, test, secs)),
            Err(why) => CellResult::Failed(failed(alg, why)),
        });
    }
    Ok((results, reports))
}

/// Runs the sweep described by `cfg`. Rows are ordered by algorithm, then
/// width (in config order), then seed (in config order), independent of
/// scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let gate = if cfg.gradient_gate {
        Some(gradient_gate(20, derive_seed(cfg.seeds[0], 0x67617465))?)
    } else {
        None
    };
    let contexts: Vec<SeedContext> = cfg
        .seeds
        .par_iter()
        .map(|&s| prepare_seed(cfg, s))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.student_widths.len())
        .flat_map(|w| (0..contexts.len()).map(move |s| (w, s)))
        .collect();
    let outputs: Vec<((usize, usize), CellOutput)> = cells
        .par_iter()
        .map(|&(w, s)| Ok(((w, s), run_cell(cfg, &contexts[s], cfg.student_widths[w])?)))
        .collect::<Result<_>>()?;

    let mut keyed_rows = Vec::new();
    let mut failures = Vec::new();
    let mut reports = Vec::new();
    for ((w, s), (results, cell_reports)) in outputs {
        for r in results {
            match r {
                CellResult::Row(row) => keyed_rows.push(((row.algorithm, w, s), row)),
                CellResult::Failed(cell) => failures.push(((cell.algorithm, w, s), cell)),
            }
        }
        reports.extend(cell_reports);
    }
    keyed_rows.sort_by_key(|(k, _)| *k);
    failures.sort_by_key(|(k, _)| *k);
    let rows: Vec<SweepRow> = keyed_rows.into_iter().map(|(_, r)| r).collect();
    Ok(ExperimentOutcome {
        summary: aggregate(&rows),
        rows,
        failures: failures.into_iter().map(|(_, f)| f).collect(),
        gate,
        reports,
    })
}
