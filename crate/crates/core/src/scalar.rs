//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Real scalar used for features, logits, and learnable parameters.
///
/// Implemented for `f32` and `f64`. Gradient checks and bit-stable
/// checkpoints assume `f64`; `f32` is supported for inference and
/// cheaper training runs.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; never fails for finite inputs.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Returns `a / |a|`, or `None` when the norm is zero.
pub(crate) fn normalized<T: Scalar>(a: &[T]) -> Option<Vec<T>> {
    let n = norm(a);
    if n == T::zero() || !n.is_finite() {
        return None;
    }
    // leave unit rows bit-identical so save/load cycles are stable
    if (n - T::one()).abs() <= T::epsilon() * T::of(4.0) {
        return Some(a.to_vec());
    }
    Some(a.iter().map(|&x| x / n).collect())
}
