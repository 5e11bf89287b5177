//! Scalar abstraction over the floating-point element type.
//!
//! All numerical code in this crate is generic over [`Scalar`]; the crate
//! root exports `f64`-backed aliases which every experiment uses. `f32` is
//! kept only for callers that can tolerate the precision loss around
//! pseudoinverses and `acos` near the interval ends.

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;

pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` constants and RNG draws.
    fn from_f64(x: f64) -> Self {
        Self::from(x).expect("f64 -> Scalar conversion")
    }

    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}
