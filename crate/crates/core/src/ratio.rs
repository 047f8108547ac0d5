//! Exact rational literals such as `"1/8"` used for granularities and group
//! shares, so configs never carry float drift.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A nonnegative rational `num/den` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ratio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Config(format!("zero denominator in {num}/{den}")));
        }
        let g = gcd(num, den).max(1);
        Ok(Ratio {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(n: u64) -> Self {
        Ratio { num: n, den: 1 }
    }

    pub fn numer(&self) -> u64 {
        self.num
    }

    pub fn denom(&self) -> u64 {
        self.den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * n)` computed exactly.
    pub fn floor_mul(&self, n: u64) -> u64 {
        ((self.num as u128 * n as u128) / self.den as u128) as u64
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || {
            Error::Config(format!(
                "`{s}` is not a rational literal (expected forms like `1/8` or `1`)"
            ))
        };
        match s.split_once('/') {
            Some((n, d)) => {
                let n = n.trim().parse::<u64>().map_err(|_| bad())?;
                let d = d.trim().parse::<u64>().map_err(|_| bad())?;
                Ratio::new(n, d)
            }
            None => s.parse::<u64>().map(Ratio::integer).map_err(|_| bad()),
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reduces() {
        let r: Ratio = "2/8".parse().unwrap();
        assert_eq!((r.numer(), r.denom()), (1, 4));
        assert_eq!(r.to_string(), "1/4");
        assert_eq!("1".parse::<Ratio>().unwrap(), Ratio::integer(1));
    }

    #[test]
    fn rejects_decimals_and_zero_denominators() {
        assert!("0.3".parse::<Ratio>().is_err());
        assert!("1/0".parse::<Ratio>().is_err());
        assert!("abc".parse::<Ratio>().is_err());
    }

    #[test]
    fn floor_mul_is_exact() {
        let r: Ratio = "1/4".parse().unwrap();
        assert_eq!(r.floor_mul(7), 1);
        assert_eq!("1/3".parse::<Ratio>().unwrap().floor_mul(637), 212);
    }
}
