//! Exact percentage values in [0, 100], stored as rationals so that
//! similarity matrices and their complements carry no floating-point drift.
//! Values are rendered to at most two decimal places only at I/O
//! boundaries; the canonical rendering round-trips byte-identically.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, ToPrimitive};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of decimal digits accepted when parsing; keeps the
/// exact representation within `i64` (100 · 10^15 < 2^63).
const MAX_FRACTION_DIGITS: usize = 15;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PercentError {
    #[error("percentage value `{0}` is not a plain decimal number")]
    Malformed(String),
    #[error("percentage value {0} is outside [0, 100]")]
    OutOfRange(String),
    #[error("percentage value `{0}` has more than {MAX_FRACTION_DIGITS} decimal places")]
    TooPrecise(String),
}

/// An exact percentage in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Percent(Ratio<i64>);

impl Percent {
    pub const ZERO: Percent = Percent(Ratio::new_raw(0, 1));
    pub const HUNDRED: Percent = Percent(Ratio::new_raw(100, 1));

    /// Percentage of `count` out of `total` (e.g. 1 of 3 → 100/3).
    pub fn from_count(count: usize, total: usize) -> Percent {
        assert!(total > 0, "total must be positive");
        assert!(count <= total, "count must not exceed total");
        Percent(Ratio::new(100 * count as i64, total as i64))
    }

    pub fn from_ratio(r: Ratio<i64>) -> Result<Percent, PercentError> {
        if r < Ratio::from_integer(0) || r > Ratio::from_integer(100) {
            return Err(PercentError::OutOfRange(r.to_string()));
        }
        Ok(Percent(r))
    }

    pub fn as_ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().expect("percent ratio fits in f64")
    }

    /// 100 − self, the complement used to turn similarity into distance.
    pub fn complement(&self) -> Percent {
        Percent(Ratio::from_integer(100) - self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0 == Ratio::from_integer(0)
    }

    /// Absolute deviation from the nearest multiple of 100/`participants`.
    /// Used to detect matrix entries that cannot be participant fractions.
    pub fn deviation_from_fraction(&self, participants: usize) -> Ratio<i64> {
        let step = Ratio::new(100, participants as i64);
        let nearest = (self.0 / step).round();
        (self.0 - nearest * step).abs()
    }
}

impl fmt::Display for Percent {
    /// Canonical rendering: round to two decimals (ties away from zero),
    /// strip trailing zeros — `100`, `12.5`, `33.33`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let scaled = (self.0 * Ratio::from_integer(100)).round().to_integer();
        let (int, frac) = (scaled / 100, scaled % 100);
        if frac == 0 {
            write!(f, "{int}")
        } else if frac % 10 == 0 {
            write!(f, "{int}.{}", frac / 10)
        } else {
            write!(f, "{int}.{frac:02}")
        }
    }
}

impl FromStr for Percent {
    type Err = PercentError;

    /// Parses a non-negative plain decimal (`40`, `12.5`, `33.33`) exactly.
    fn from_str(s: &str) -> Result<Percent, PercentError> {
        let malformed = || PercentError::Malformed(s.to_string());
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() || int_part.bytes().any(|b| !b.is_ascii_digit()) {
            return Err(malformed());
        }
        if s.contains('.') && (frac_part.is_empty() || frac_part.bytes().any(|b| !b.is_ascii_digit())) {
            return Err(malformed());
        }
        if frac_part.len() > MAX_FRACTION_DIGITS {
            return Err(PercentError::TooPrecise(s.to_string()));
        }
        let int: i64 = int_part.parse().map_err(|_| PercentError::OutOfRange(s.to_string()))?;
        let denom = 10i64.pow(frac_part.len() as u32);
        let frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().map_err(|_| malformed())? };
        let value = Ratio::new(int.checked_mul(denom).ok_or_else(|| PercentError::OutOfRange(s.to_string()))? + frac, denom);
        Percent::from_ratio(value)
    }
}
