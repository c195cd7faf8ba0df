//! Small helpers over plain slices.

use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn max_abs<T: Real>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| m.max(v.abs()))
}

pub fn add<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn sub<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn scale<T: Real>(a: &[T], s: T) -> Vec<T> {
    a.iter().map(|&x| x * s).collect()
}

/// Entrywise product.
pub fn mul<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x * y).collect()
}

pub fn relu<T: Real>(a: &[T]) -> Vec<T> {
    a.iter().map(|&x| x.max(T::zero())).collect()
}

pub fn relu_in_place<T: Real>(a: &mut [T]) {
    for x in a {
        *x = x.max(T::zero());
    }
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub fn all_finite<T: Real>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Copies `a` into a vector of length `len`, padding with zeros or truncating.
pub fn resized<T: Real>(a: &[T], len: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    let n = a.len().min(len);
    out[..n].copy_from_slice(&a[..n]);
    out
}
