//! Scalar abstraction shared by every numeric container in the crate.
//!
//! Probabilities, rewards, values and Gumbel noise all use the same scalar
//! type. `f64` is the default used by the CLI and the acceptance suite;
//! `f32` halves the memory of large posteriors at the cost of precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, panicking only for non-representable values.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Largest value strictly below `self` (finite inputs only).
    fn next_below(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn next_below(self) -> Self {
        next_down_f64(self)
    }
}

impl Scalar for f32 {
    #[inline]
    fn next_below(self) -> Self {
        next_down_f32(self)
    }
}

fn next_down_f64(x: f64) -> f64 {
    if x.is_nan() || x == f64::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits - 1)
    } else {
        f64::from_bits(bits + 1)
    }
}

fn next_down_f32(x: f32) -> f32 {
    if x.is_nan() || x == f32::NEG_INFINITY {
        return x;
    }
    if x == 0.0 {
        return -f32::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f32::from_bits(bits - 1)
    } else {
        f32::from_bits(bits + 1)
    }
}

/// Tolerance used for probability sanity checks (row sums, initial mass).
pub const PROB_TOLERANCE: f64 = 1e-9;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn next_below_is_strictly_smaller() {
        for x in [1.0f64, -1.0, 0.0, 1e300, -3.5e-300] {
            let y = x.next_below();
            assert!(y < x, "{y} !< {x}");
        }
        for x in [1.0f32, -1.0, 0.0, 7.25] {
            assert!(x.next_below() < x);
        }
    }

    #[test]
    fn lit_roundtrip() {
        assert_eq!(<f64 as Scalar>::lit(0.25), 0.25);
        assert_eq!(<f32 as Scalar>::lit(0.25), 0.25f32);
        assert_eq!(<f32 as Scalar>::lit(0.5).as_f64(), 0.5);
    }
}
