//! Exact fractions for support ratios and marking probabilities.

use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FractionError {
    #[error("{0} is not a finite number")]
    NotFinite(f64),
    #[error("{0} has no small rational representation")]
    NotRepresentable(f64),
    #[error("fraction {0} lies outside [0, 1]")]
    OutOfRange(String),
}

/// A rational number in `[0, 1]`.
///
/// Comparisons of the form `count >= r * k` are decided by cross
/// multiplication so that `count == r * k` is never misclassified.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fraction(Ratio<i64>);

impl Fraction {
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));
    pub const ZERO: Fraction = Fraction(Ratio::new_raw(0, 1));

    pub fn new(num: i64, den: i64) -> Result<Self, FractionError> {
        if den == 0 {
            return Err(FractionError::OutOfRange(format!("{num}/0")));
        }
        let r = Ratio::new(num, den);
        if r < Ratio::from_integer(0) || r > Ratio::from_integer(1) {
            return Err(FractionError::OutOfRange(r.to_string()));
        }
        Ok(Fraction(r))
    }

    /// Best small-denominator rational for a decimal literal such as `0.51`.
    pub fn from_f64(x: f64) -> Result<Self, FractionError> {
        if !x.is_finite() {
            return Err(FractionError::NotFinite(x));
        }
        let r = Ratio::<i64>::approximate_float(x).ok_or(FractionError::NotRepresentable(x))?;
        if (*r.numer() as f64 / *r.denom() as f64 - x).abs() > 1e-12 {
            return Err(FractionError::NotRepresentable(x));
        }
        Self::new(*r.numer(), *r.denom())
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    /// `count >= self * k`, exactly.
    pub fn count_reaches(&self, count: usize, k: usize) -> bool {
        (count as i128) * (self.denom() as i128) >= (self.numer() as i128) * (k as i128)
    }

    /// `ceil(self * k)`.
    pub fn ceil_mul(&self, k: usize) -> usize {
        let prod = self.numer() as i128 * k as i128;
        Integer::div_ceil(&prod, &(self.denom() as i128)) as usize
    }

    /// `floor(self * k)`.
    pub fn floor_mul(&self, k: usize) -> usize {
        let prod = self.numer() as i128 * k as i128;
        Integer::div_floor(&prod, &(self.denom() as i128)) as usize
    }

    /// Whether `self * k` is an integer.
    pub fn mul_is_integer(&self, k: usize) -> bool {
        (self.numer() as i128 * k as i128) % self.denom() as i128 == 0
    }

    pub fn as_ratio(&self) -> Ratio<i64> {
        self.0
    }
}

impl fmt::Debug for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.to_f64())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let x = f64::deserialize(d)?;
        Fraction::from_f64(x).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_literals_are_recovered() {
        assert_eq!(Fraction::from_f64(0.8).unwrap(), Fraction::new(4, 5).unwrap());
        assert_eq!(Fraction::from_f64(0.51).unwrap(), Fraction::new(51, 100).unwrap());
        assert!(Fraction::from_f64(1.5).is_err());
        assert!(Fraction::from_f64(f64::NAN).is_err());
    }

    #[test]
    fn boundary_counts_are_inclusive() {
        let half = Fraction::new(1, 2).unwrap();
        assert!(half.count_reaches(2, 4));
        assert!(!half.count_reaches(1, 4));
        let r = Fraction::from_f64(0.3).unwrap();
        assert!(r.count_reaches(3, 10));
    }

    #[test]
    fn rounding_multiples() {
        let p = Fraction::from_f64(0.8).unwrap();
        assert_eq!(p.ceil_mul(10), 8);
        assert_eq!(p.ceil_mul(4), 4);
        assert_eq!(Fraction::from_f64(0.51).unwrap().floor_mul(10), 5);
        assert!(Fraction::from_f64(0.5).unwrap().mul_is_integer(10));
        assert!(!Fraction::from_f64(0.51).unwrap().mul_is_integer(4));
    }
}
