//! Numeric traits shared by the price-facing and statistics code.

use std::fmt::{Debug, Display};

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};

/// A price scalar.
///
/// The agents only ever compare prices, so anything totally ordered on
/// valid (positive, finite) values works. `f64` is the workhorse; `f32` trades
/// resolution for memory on long archives; `Ratio<i64>` keeps the mid-price
/// transform exact.
pub trait Price:
    Num + PartialOrd + Copy + Debug + Display + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// Parses a plain decimal literal such as `1.2001`.
    fn parse_decimal(s: &str) -> Option<Self>;

    /// Lossy view used for logging and statistics.
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Price for f64 {
    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl Price for f32 {
    fn parse_decimal(s: &str) -> Option<Self> {
        s.parse::<f32>().ok().filter(|v| v.is_finite())
    }
}

impl Price for Ratio<i64> {
    fn parse_decimal(s: &str) -> Option<Self> {
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut numer: i64 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            numer = numer.checked_mul(10)?.checked_add(i64::from(b - b'0'))?;
        }
        let denom = 10i64.checked_pow(u32::try_from(frac_part.len()).ok()?)?;
        let value = Ratio::new(numer, denom);
        Some(if negative { -value } else { value })
    }
}

/// Floating-point scalar for the statistics layer (fits, densities, means).
pub trait Real: Float + FromPrimitive + Debug + Display + Send + Sync + 'static {
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable as float")
    }

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable as float")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parses_exact_decimals() {
        assert_eq!(Ratio::<i64>::parse_decimal("1.2001"), Some(Ratio::new(12001, 10000)));
        assert_eq!(Ratio::<i64>::parse_decimal("3"), Some(Ratio::from_integer(3)));
        assert_eq!(Ratio::<i64>::parse_decimal(".5"), Some(Ratio::new(1, 2)));
        assert_eq!(Ratio::<i64>::parse_decimal("-0.25"), Some(Ratio::new(-1, 4)));
        assert_eq!(Ratio::<i64>::parse_decimal("abc"), None);
        assert_eq!(Ratio::<i64>::parse_decimal("1e3"), None);
        assert_eq!(Ratio::<i64>::parse_decimal("."), None);
        assert_eq!(Ratio::<i64>::parse_decimal(""), None);
    }

    #[test]
    fn floats_reject_non_finite() {
        assert_eq!(f64::parse_decimal("inf"), None);
        assert_eq!(f64::parse_decimal("NaN"), None);
        assert_eq!(f32::parse_decimal("1.5"), Some(1.5));
    }
}
