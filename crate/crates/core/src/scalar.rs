//! Scalar abstractions.
//!
//! Structured products and exact elimination only need ring/field arithmetic and
//! work over [`Scalar`], which includes exact rationals. Everything that measures
//! magnitude (norms, SVD, solvers, the constructions) is generic over [`Real`],
//! implemented for `f32` and `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::Neg;

use num_traits::{Float, FromPrimitive, Num, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::Result;
use crate::tensor::svd::{self, Svd};
use crate::tensor::Matrix;

/// Field-like element type for dense matrices.
pub trait Scalar: Clone + Debug + PartialEq + Num + Neg<Output = Self> + Send + Sync + 'static {}

impl<T> Scalar for T where T: Clone + Debug + PartialEq + Num + Neg<Output = T> + Send + Sync + 'static
{}

/// Floating-point scalar: f32 or f64.
pub trait Real:
    Scalar
    + Copy
    + Float
    + FromPrimitive
    + ToPrimitive
    + Display
    + Default
    + Sum
    + Serialize
    + DeserializeOwned
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("every f64 converts to a float type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Thin singular value decomposition, singular values in descending order.
    fn svd(m: &Matrix<Self>) -> Result<Svd<Self>>;
}

impl Real for f64 {
    fn svd(m: &Matrix<Self>) -> Result<Svd<Self>> {
        svd::svd_faer(m)
    }
}

impl Real for f32 {
    fn svd(m: &Matrix<Self>) -> Result<Svd<Self>> {
        svd::svd_faer(m)
    }
}
