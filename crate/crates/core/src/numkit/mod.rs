//! Minimal differentiable-array core: dense arrays, the primitives a
//! Transformer needs, and a reverse-mode tape.
//!
//! Storage defaults to `f32`; reductions (sums, normalization statistics,
//! softmax partition functions, losses) accumulate in `f64`. Every primitive
//! is generic over [`Real`] so the same graph can be evaluated in `f64` when a
//! finite-difference check needs the headroom.

mod array;
pub mod kernels;
mod tape;

pub use array::Array;
pub use tape::{AttentionLayout, Dropout, Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} does not hold {len} values")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("arrays of rank {rank} are not supported")]
    Rank { rank: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{0}")]
    Invalid(&'static str),
}

/// Floating-point element type.
pub trait Real:
    num_traits::Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static
{
    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

/// Numerically stable softmax of a score vector.
pub fn softmax<T: Real>(v: &[T]) -> Result<Vec<T>, NumError> {
    if v.is_empty() {
        return Err(NumError::Empty("softmax"));
    }
    let mut out = v.to_vec();
    tape::softmax_in_place(&mut out);
    Ok(out)
}

/// Normalizes `v` to zero mean and unit variance, then applies `gain` and `bias`.
pub fn layer_norm<T: Real>(v: &[T], gain: &[T], bias: &[T], eps: f64) -> Result<Vec<T>, NumError> {
    if v.len() != gain.len() || v.len() != bias.len() {
        return Err(NumError::Shape {
            op: "layer_norm",
            left: vec![v.len()],
            right: vec![gain.len(), bias.len()],
        });
    }
    if v.is_empty() {
        return Err(NumError::Empty("layer_norm"));
    }
    if eps <= 0.0 {
        return Err(NumError::Invalid("layer_norm eps must be positive"));
    }
    let (mean, inv) = tape::row_stats(v, eps);
    Ok(v.iter()
        .zip(gain.iter().zip(bias))
        .map(|(&x, (&g, &b))| T::of((x.f64() - mean) * inv * g.f64() + b.f64()))
        .collect())
}
