//! Fixed-point quantities with 18 fractional decimal digits.
//!
//! ETH is held in wei, token amounts in the token's smallest unit (also
//! 10^-18 of a token) and prices in wei per whole token. All three are
//! `u128` newtypes; products that can exceed 128 bits go through a
//! 256-bit intermediate in [`mul_div`].

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Sub, SubAssign};
use std::str::FromStr;

use ethnum::U256;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// 10^18, the scale of every fixed-point quantity here.
pub const SCALE: u128 = 1_000_000_000_000_000_000;

pub const BPS_DENOM: u128 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid decimal amount {input:?}: {reason}")]
pub struct ParseAmountError {
    pub input: String,
    pub reason: &'static str,
}

/// `floor(a * b / c)` with a 256-bit intermediate. Panics on `c == 0` or
/// when the result does not fit in 128 bits.
pub fn mul_div(a: u128, b: u128, c: u128) -> u128 {
    assert!(c != 0, "mul_div by zero");
    let q = U256::from(a) * U256::from(b) / U256::from(c);
    u128::try_from(q).expect("mul_div overflow")
}

/// `ceil(a * b / c)`.
pub fn mul_div_ceil(a: u128, b: u128, c: u128) -> u128 {
    assert!(c != 0, "mul_div by zero");
    let num = U256::from(a) * U256::from(b);
    let c = U256::from(c);
    let q = num / c;
    let q = if q * c == num { q } else { q + 1 };
    u128::try_from(q).expect("mul_div overflow")
}

/// Compares `a * b` against `c * d` exactly.
pub fn cmp_products(a: u128, b: u128, c: u128, d: u128) -> std::cmp::Ordering {
    (U256::from(a) * U256::from(b)).cmp(&(U256::from(c) * U256::from(d)))
}

fn format_fixed(raw: u128, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let int = raw / SCALE;
    let frac = raw % SCALE;
    if let Some(prec) = f.precision() {
        // Truncating display; only used for human-facing text.
        let prec = prec.min(18);
        if prec == 0 {
            return write!(f, "{int}");
        }
        let digits = format!("{frac:018}");
        return write!(f, "{int}.{}", &digits[..prec]);
    }
    if frac == 0 {
        write!(f, "{int}")
    } else {
        let digits = format!("{frac:018}");
        write!(f, "{int}.{}", digits.trim_end_matches('0'))
    }
}

fn parse_fixed(s: &str) -> Result<u128, ParseAmountError> {
    let err = |reason| ParseAmountError { input: s.to_string(), reason };
    let t = s.trim().replace('_', "");
    if t.is_empty() {
        return Err(err("empty"));
    }
    let (int_part, frac_part) = match t.split_once('.') {
        Some((i, f)) => (i, f),
        None => (t.as_str(), ""),
    };
    if frac_part.len() > 18 {
        return Err(err("more than 18 fractional digits"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return Err(err("not an unsigned decimal"));
    }
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err("no digits"));
    }
    let int: u128 = if int_part.is_empty() { 0 } else { int_part.parse().map_err(|_| err("integer part too large"))? };
    let mut frac: u128 = 0;
    if !frac_part.is_empty() {
        frac = frac_part.parse().map_err(|_| err("bad fraction"))?;
        frac *= 10u128.pow((18 - frac_part.len()) as u32);
    }
    int.checked_mul(SCALE).and_then(|v| v.checked_add(frac)).ok_or_else(|| err("overflow"))
}

macro_rules! fixed_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u128);

        impl $name {
            pub const ZERO: $name = $name(0);

            pub const fn from_raw(raw: u128) -> Self {
                $name(raw)
            }

            /// Whole units, e.g. `from_whole(3)` is 3.0.
            pub const fn from_whole(n: u128) -> Self {
                $name(n * SCALE)
            }

            pub const fn raw(self) -> u128 {
                self.0
            }

            pub fn is_zero(self) -> bool {
                self.0 == 0
            }

            pub fn checked_sub(self, rhs: Self) -> Option<Self> {
                self.0.checked_sub(rhs.0).map($name)
            }

            pub fn saturating_sub(self, rhs: Self) -> Self {
                $name(self.0.saturating_sub(rhs.0))
            }

            /// Lossy conversion for reporting and probabilistic logic only.
            pub fn to_f64(self) -> f64 {
                self.0 as f64 / SCALE as f64
            }

            /// Scales by `bps / 10_000`, rounding down.
            pub fn bps(self, bps: u32) -> Self {
                $name(mul_div(self.0, bps as u128, BPS_DENOM))
            }

            /// Scales by a fraction in `[0, 1]` expressed with 18 decimals.
            pub fn scale_fraction(self, fraction: Fraction) -> Self {
                $name(mul_div(self.0, fraction.0, SCALE))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                format_fixed(self.0, f)
            }
        }

        impl FromStr for $name {
            type Err = ParseAmountError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                parse_fixed(s).map($name)
            }
        }

        impl Add for $name {
            type Output = $name;
            fn add(self, rhs: $name) -> $name {
                $name(self.0.checked_add(rhs.0).expect(concat!(stringify!($name), " overflow")))
            }
        }

        impl AddAssign for $name {
            fn add_assign(&mut self, rhs: $name) {
                *self = *self + rhs;
            }
        }

        impl Sub for $name {
            type Output = $name;
            fn sub(self, rhs: $name) -> $name {
                $name(self.0.checked_sub(rhs.0).expect(concat!(stringify!($name), " underflow")))
            }
        }

        impl SubAssign for $name {
            fn sub_assign(&mut self, rhs: $name) {
                *self = *self - rhs;
            }
        }

        impl Sum for $name {
            fn sum<I: Iterator<Item = $name>>(iter: I) -> $name {
                iter.fold($name::ZERO, |a, b| a + b)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

fixed_type!(
    /// An amount of ETH in wei.
    Eth
);
fixed_type!(
    /// An amount of a launched token in its smallest unit (10^-18 token).
    Tokens
);
fixed_type!(
    /// ETH per whole token, in wei.
    Price
);
fixed_type!(
    /// A dimensionless ratio with 18 decimals; `Fraction::ONE` is 1.0.
    Fraction
);

impl Fraction {
    pub const ONE: Fraction = Fraction(SCALE);

    /// Nearest fixed-point representation of a float in `[0, 1]`.
    /// Values outside that interval are clamped.
    pub fn from_f64_clamped(x: f64) -> Fraction {
        if !(x > 0.0) {
            return Fraction::ZERO;
        }
        if x >= 1.0 {
            return Fraction::ONE;
        }
        // exact: x = m * 2^-s, so x * SCALE = m * SCALE >> s, rounded half up
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        let frac = (bits & ((1 << 52) - 1)) as u128;
        let (m, s) = if exp == 0 { (frac, 1074) } else { (frac | 1 << 52, 1075 - exp) };
        if s >= 120 {
            return Fraction::ZERO;
        }
        let v = m * SCALE;
        Fraction((v >> s) + ((v >> (s - 1)) & 1))
    }
}

impl Price {
    /// Spot price of `tokens` bought for `eth`, i.e. `eth / tokens` per whole token.
    pub fn ratio(eth: Eth, tokens: Tokens) -> Option<Price> {
        if tokens.is_zero() {
            None
        } else {
            Some(Price(mul_div(eth.0, SCALE, tokens.0)))
        }
    }

    /// Value of `tokens` at this price.
    pub fn value_of(self, tokens: Tokens) -> Eth {
        Eth(mul_div(self.0, tokens.0, SCALE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        let e: Eth = "1.5".parse().unwrap();
        assert_eq!(e.raw(), 1_500_000_000_000_000_000);
        assert_eq!(e.to_string(), "1.5");
        assert_eq!(Eth::from_whole(3).to_string(), "3");
        assert_eq!("0.000000000000000001".parse::<Eth>().unwrap().raw(), 1);
        assert_eq!(format!("{:.4}", "2.123456".parse::<Eth>().unwrap()), "2.1234");
        assert!("1.2.3".parse::<Eth>().is_err());
        assert!("-1".parse::<Eth>().is_err());
        assert!("0.0000000000000000001".parse::<Eth>().is_err());
        assert_eq!("1_000".parse::<Tokens>().unwrap(), Tokens::from_whole(1000));
    }

    #[test]
    fn wide_products() {
        let big = 10u128.pow(27);
        assert_eq!(mul_div(big, big, big), big);
        assert_eq!(mul_div_ceil(10, 1, 3), 4);
        assert_eq!(mul_div(10, 1, 3), 3);
        assert_eq!(cmp_products(big, big, big, big + 1), std::cmp::Ordering::Less);
    }

    #[test]
    fn serde_as_decimal_string() {
        let e = Eth::from_raw(1_234_000_000_000_000_001);
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, "\"1.234000000000000001\"");
        assert_eq!(serde_json::from_str::<Eth>(&s).unwrap(), e);
    }

    #[test]
    fn price_helpers() {
        let p = Price::ratio(Eth::from_whole(100), Tokens::from_whole(1_000_000)).unwrap();
        assert_eq!(p.to_string(), "0.0001");
        assert_eq!(p.value_of(Tokens::from_whole(10)), "0.001".parse().unwrap());
        assert!(Price::ratio(Eth::from_whole(1), Tokens::ZERO).is_none());
    }
}
