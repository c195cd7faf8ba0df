//! Target and frozen network representations, forward passes, normalization
//! folding and norm-bound propagation.

mod frozen;
mod io;
mod norm;
mod target;

pub use frozen::{
    forward_skip, forward_wide, padded_dim, subselect, FrozenLayer, FrozenWideStack, SkipBlock,
    SkipBlockStack, SkipLayer,
};
pub use io::{Network, NetworkDoc, NETWORK_DOC_VERSION};
pub use norm::{fold_norm, NormParams};
pub use target::{
    forward_target, propagate_bound, propagate_bound_from, sample_target, sample_target_with_rank,
    NormBound, TargetLayer, TargetNetwork,
};

use crate::error::Result;
use crate::scalar::Real;

/// Anything that maps an input vector to an output vector.
pub trait Forward<T: Real> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, x: &[T]) -> Result<Vec<T>>;
}

impl<T: Real> Forward<T> for TargetNetwork<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        TargetNetwork::output_dim(self)
    }

    fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        TargetNetwork::forward(self, x)
    }
}

impl<T: Real> Forward<T> for FrozenWideStack<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        FrozenWideStack::output_dim(self)
    }

    fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        FrozenWideStack::forward(self, x)
    }
}

impl<T: Real> Forward<T> for SkipBlockStack<T> {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.input_dim
    }

    fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        SkipBlockStack::forward(self, x)
    }
}
