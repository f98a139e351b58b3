//! Scalar abstraction for the numerical analytics.
//!
//! Agreement statistics and scorer ratios are generic over [`Scalar`] so the
//! same code runs in `f64` for reporting and in exact rational arithmetic for
//! oracle checks.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{Num, ToPrimitive};

/// Numeric type usable by the analytics: a field with conversion from counts.
pub trait Scalar: Num + Clone + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;

    fn to_f64(&self) -> f64;

    fn ratio(num: u64, den: u64) -> Self {
        Self::from_count(num) / Self::from_count(den)
    }

    /// `num / den`, or zero when `den` is zero.
    fn ratio_or_zero(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::zero()
        } else {
            Self::ratio(num, den)
        }
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for Rational64 {
    fn from_count(n: u64) -> Self {
        Rational64::from_integer(i64::try_from(n).expect("count exceeds i64"))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for BigRational {
    fn from_count(n: u64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Harmonic mean of two ratios, zero when both are zero.
pub fn harmonic_mean<T: Scalar>(a: &T, b: &T) -> T {
    let sum = a.clone() + b.clone();
    if sum == T::zero() {
        return T::zero();
    }
    let two = T::from_count(2);
    two * a.clone() * b.clone() / sum
}
