//! Floating scalar abstraction for the numeric core.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating scalar the probability/energy math is generic over.
///
/// `f32` and `f64` implement it; the shipped pipeline uses `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, panicking only on values no float carries.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    fn logit(self) -> Self {
        (self / (Self::one() - self)).ln()
    }

    fn sigmoid(self) -> Self {
        Self::one() / (Self::one() + (-self).exp())
    }

    fn clampf(self, lo: Self, hi: Self) -> Self {
        self.max(lo).min(hi)
    }
}

impl Real for f32 {}
impl Real for f64 {}
