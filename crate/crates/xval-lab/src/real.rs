//! Scalar precision abstraction: every numeric component is generic over
//! `Real`, instantiated as `f32` for training runs and `f64` for
//! gradient-checking and the verification harnesses.

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Real:
    num_traits::Float + num_traits::NumAssign + Sum + Send + Sync + Debug + Display + 'static
{
    const BITS: u32;

    fn from_f64(x: f64) -> Self;
    fn to_f64_(self) -> f64;
}

impl Real for f32 {
    const BITS: u32 = 32;

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64_(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const BITS: u32 = 64;

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64_(self) -> f64 {
        self
    }
}

/// Shorthand for converting an `f64` constant into the active precision.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x)
}
