//! Reals extended by `+∞`.
//!
//! Rate functions take the value `+∞` off their effective domain and the
//! conventions `0·∞ = 0` and `0/0 = 0` have to hold exactly. Keeping the
//! infinite case as its own variant stops a stray `0.0 * f64::INFINITY`
//! from turning a sum into `NaN`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Serialize, Serializer};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    pub const ZERO: ExtReal = ExtReal::Finite(0.0);

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            ExtReal::Infinite => None,
        }
    }

    /// Lossy view as an `f64`, mapping `Infinite` to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::Finite(v) => v,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    /// Multiplication by a nonnegative scalar with `0·∞ = 0`.
    pub fn scale(self, factor: f64) -> ExtReal {
        debug_assert!(factor >= 0.0);
        match self {
            _ if factor == 0.0 => ExtReal::ZERO,
            ExtReal::Finite(v) => ExtReal::Finite(v * factor),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }

    pub fn min(self, other: ExtReal) -> ExtReal {
        match (self, other) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a.min(b)),
            (ExtReal::Infinite, x) | (x, ExtReal::Infinite) => x,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::Infinite
        } else {
            ExtReal::Finite(v)
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::Finite(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl AddAssign for ExtReal {
    fn add_assign(&mut self, rhs: ExtReal) {
        *self = *self + rhs;
    }
}

impl Sum for ExtReal {
    fn sum<I: Iterator<Item = ExtReal>>(iter: I) -> ExtReal {
        iter.fold(ExtReal::ZERO, Add::add)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::Finite(v) => serializer.serialize_f64(*v),
            ExtReal::Infinite => serializer.serialize_str("inf"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_times_infinity_is_zero() {
        assert_eq!(ExtReal::Infinite.scale(0.0), ExtReal::ZERO);
        assert_eq!(ExtReal::Infinite.scale(2.0), ExtReal::Infinite);
    }

    #[test]
    fn sums_absorb_infinity() {
        let total: ExtReal = [ExtReal::Finite(1.0), ExtReal::Infinite, ExtReal::Finite(2.0)]
            .into_iter()
            .sum();
        assert_eq!(total, ExtReal::Infinite);
        assert!(ExtReal::Finite(3.0) < ExtReal::Infinite);
    }
}
