//! Scalar abstraction: the whole numeric core is generic over the
//! floating-point type through this trait.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate (f32 or f64).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from f64, for literals and RNG output.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from(v).expect("f64 conversion")
    }

    /// Lossy conversion from usize, for counts entering arithmetic.
    fn from_usize_lossy(v: usize) -> Self {
        Self::from(v).expect("usize conversion")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}
