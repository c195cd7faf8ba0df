//! Equivalence checks, SGD baselines and the teacher/student experiment suite.

mod emit;
mod equivalence;
mod experiment;
mod sgd;

pub use emit::{emit_gnuplot, emit_results, read_results, write_results};
pub use equivalence::{verify_equivalence, verify_equivalence_on, EquivalenceResult};
pub use experiment::{
    aggregate, make_dataset, make_teacher, run_experiment, student_widths, trimmed_mean,
    AggregateRow, Algorithm, ExperimentConfig, ExperimentOutcome, FailedCell, SweepRow,
};
pub use sgd::{
    bn_gradient, bn_parameters, dense_gradient, dense_parameters, gradient_check_bn,
    gradient_check_dense, gradient_gate, mse, set_bn_parameters, set_dense_parameters,
    sgd_train_bn, sgd_train_dense, Dataset, GateReport, GradientCheck, Schedule, SgdConfig,
    TrainCurve, GRADIENT_TOLERANCE,
};
