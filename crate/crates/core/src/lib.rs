//! Exact reconstruction of ReLU networks by solving only the normalization
//! parameters (per-unit scale and shift) of frozen random networks.
//!
//! The [`wide`] construction realizes a depth-`l`, width-`d` target with a
//! `2l`-layer frozen network of width `d²`; [`deep`] trades width for depth
//! with skip-connected blocks; [`sparse`] runs the wide construction on
//! Bernoulli-masked weights. [`harness`] verifies equivalence and runs the
//! teacher/student experiments.

pub mod deep;
pub mod error;
pub mod harness;
pub mod netmodel;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod tensor;
pub mod wide;

pub use error::{Error, Result};
pub use scalar::{Real, Scalar};
pub use tensor::Matrix;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type TargetNet = netmodel::TargetNetwork<f64>;
pub type WideNet = netmodel::FrozenWideStack<f64>;
pub type SkipNet = netmodel::SkipBlockStack<f64>;
