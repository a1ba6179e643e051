//! Scalar abstraction: the numeric element type of tensors and images.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

/// Floating-point scalar usable throughout the crate (f32 or f64).
pub trait Scalar:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from f64, for literals and RNG draws.
    fn from_f64_lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for embedding an f64 constant into a generic scalar.
pub fn lit<T: Scalar>(v: f64) -> T {
    T::from_f64_lit(v)
}
