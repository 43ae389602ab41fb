//! Exact rational scores.
//!
//! All similarity formulas in this crate are ratios of small integers, so
//! scores are kept as exact rationals internally and rendered as decimals
//! only at the report boundary.

use num::{BigInt, BigRational, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

/// Exact score value. Always in `[0, 1]` for similarities; aggregate sums
/// (e.g. `Sim_s`) may exceed 1.
pub type Score = BigRational;

/// Builds a score from an integer numerator/denominator pair.
///
/// Panics if `den` is zero.
pub fn ratio(num: u64, den: u64) -> Score {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Score zero.
pub fn zero() -> Score {
    BigRational::zero()
}

/// Score one.
pub fn one() -> Score {
    BigRational::from(BigInt::from(1))
}

/// Lossless fraction rendering, e.g. `"11/16"` or `"1"`.
pub fn fraction(s: &Score) -> String {
    if s.denom() == &BigInt::from(1) {
        s.numer().to_string()
    } else {
        format!("{}/{}", s.numer(), s.denom())
    }
}

/// Approximate decimal value for human-facing output.
pub fn approx(s: &Score) -> f64 {
    s.to_f64().unwrap_or_else(|| {
        let n = s.numer().to_f64().unwrap_or(f64::NAN);
        let d = s.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Report-boundary representation of a score: exact fraction plus a decimal
/// approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRepr {
    pub fraction: String,
    pub value: f64,
}

impl ScoreRepr {
    pub fn of(s: &Score) -> Self {
        ScoreRepr {
            fraction: fraction(s),
            value: approx(s),
        }
    }
}
