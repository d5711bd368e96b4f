//! Exact rational arithmetic for token quantities and pegging rates.
//!
//! Serialized as `num/den` strings so canonical documents never carry floats.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{Signed, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(Ratio<i128>);

impl Rational {
    /// `num/den`, reduced, sign carried by the numerator. Zero denominator is rejected.
    pub fn new(num: i128, den: i128) -> Result<Self, ParseError> {
        if den == 0 {
            return Err(ParseError::BadRational(format!("{num}/{den}")));
        }
        Ok(Rational(Ratio::new(num, den)))
    }

    pub fn integer(n: i128) -> Self {
        Rational(Ratio::from_integer(n))
    }

    pub fn zero() -> Self {
        Rational(Ratio::zero())
    }

    pub fn one() -> Self {
        Rational(Ratio::from_integer(1))
    }

    /// Percent notation: `percent(10)` is 10% = 1/10.
    pub fn percent(n: i128) -> Self {
        Rational(Ratio::new(n, 100))
    }

    pub fn numer(&self) -> i128 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i128 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    /// Floor division as an i128, for satoshi-granular allocations.
    pub fn floor_i128(&self) -> i128 {
        self.0.floor().to_integer()
    }

    /// Render as a percentage, e.g. 3/10 → "30%", 1/3 → "100/3%".
    pub fn percent_string(&self) -> String {
        let scaled = self.0 * Ratio::from_integer(100);
        if scaled.is_integer() {
            format!("{}%", scaled.to_integer())
        } else {
            format!("{}/{}%", scaled.numer(), scaled.denom())
        }
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational(self.0 + rhs.0)
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational(self.0 - rhs.0)
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational(self.0 * rhs.0)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl FromStr for Rational {
    type Err = ParseError;

    /// Accepts `num/den` or a bare integer.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ParseError::BadRational(s.into());
        match s.split_once('/') {
            Some((num, den)) => {
                let num: i128 = num.trim().parse().map_err(|_| bad())?;
                let den: i128 = den.trim().parse().map_err(|_| bad())?;
                Rational::new(num, den)
            }
            None => {
                let n: i128 = s.trim().parse().map_err(|_| bad())?;
                Ok(Rational::integer(n))
            }
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}
