//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is any
//! IEEE float with the arithmetic, casting, and iterator traits the kernels
//! need. `f32` and `f64` are the provided implementations; the crate root
//! exports `f64` aliases, which is what the CLI and the serialized weight
//! container use.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy cast from an `f64` literal or config value.
    fn cast(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 literal")
    }

    /// Widening (or rounding, for `f32` sources) view as `f64`.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
