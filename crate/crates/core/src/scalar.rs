//! Scalar abstraction shared by the simulator, the recognizers and the
//! single-neuron oracle.
//!
//! The simulator runs on `f64`. The same code paths accept `f32` for quick
//! experiments and [`BigRational`] for exact audits of short trajectories.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, One, ToPrimitive};

/// Numeric type usable for weights, potentials and thresholds.
pub trait Scalar:
    Clone + Debug + PartialOrd + Num + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `num / den` in this representation.
    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Self::from_i64(num).expect("integer conversion") / Self::from_i64(den).expect("integer conversion")
    }

    /// Converts a finite `f64`. Rationals receive the exact binary value.
    fn from_f64_lossy(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite scalar {x}");
        Self::from_f64(x).expect("finite float conversion")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `1 / k^exp`.
    fn inverse_power(k: u64, exp: u32) -> Self {
        let mut den = Self::one();
        let base = Self::from_u64(k).expect("integer conversion");
        for _ in 0..exp {
            den = den * base.clone();
        }
        Self::one() / den
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
impl Scalar for BigRational {
    fn from_ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

/// Floors `x` onto the dyadic grid `2^-bits`.
///
/// Used by the high-precision audit: exact rational iteration of the cubic
/// Oja recurrence triples the denominator size every step.
pub fn round_dyadic(x: &BigRational, bits: u32) -> BigRational {
    let scale = BigInt::one() << bits;
    let scaled = (x * BigRational::from_integer(scale.clone())).floor();
    BigRational::new(scaled.to_integer(), scale)
}

/// Exact `sum(w_i)` over the set positions of `x`.
pub(crate) fn masked_sum<S: Scalar>(w: &[S], x: &[bool]) -> S {
    w.iter()
        .zip(x)
        .filter(|(_, &on)| on)
        .fold(S::zero(), |acc, (wi, _)| acc + wi.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_power_is_exact_for_rationals() {
        let v: BigRational = Scalar::inverse_power(4, 2);
        assert_eq!(v, BigRational::from_ratio(1, 16));
        assert_eq!(<f64 as Scalar>::inverse_power(2, 1), 0.5);
    }

    #[test]
    fn dyadic_rounding_floors() {
        let third = BigRational::from_ratio(1, 3);
        let r = round_dyadic(&third, 8);
        assert!(r <= third);
        assert!(&third - &r < BigRational::from_ratio(1, 256));
        assert_eq!(round_dyadic(&BigRational::from_ratio(1, 4), 8), BigRational::from_ratio(1, 4));
    }
}
