//! Exact decimal arithmetic for token pricing.

use alloc::string::String;
use core::fmt;
use core::ops::Add;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MoneyError {
    #[error("invalid decimal amount {0:?}")]
    Invalid(String),
    #[error("amount {0:?} has more than {1} fractional digits")]
    TooPrecise(String, u32),
}

fn parse_fixed(s: &str, scale: u32) -> Result<u128, MoneyError> {
    let t = s.trim();
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    let digits_ok = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() && frac.is_empty() || !digits_ok(int) || !digits_ok(frac) {
        return Err(MoneyError::Invalid(s.into()));
    }
    if frac.len() as u32 > scale {
        return Err(MoneyError::TooPrecise(s.into(), scale));
    }
    let int_v: u128 = if int.is_empty() { 0 } else { int.parse().map_err(|_| MoneyError::Invalid(s.into()))? };
    let mut frac_v: u128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| MoneyError::Invalid(s.into()))? };
    frac_v *= 10u128.pow(scale - frac.len() as u32);
    Ok(int_v * 10u128.pow(scale) + frac_v)
}

/// Currency amount held as an integer count of 10⁻¹² units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(u128);

impl Money {
    pub const SCALE: u32 = 12;
    pub const ZERO: Money = Money(0);

    pub fn from_pico(units: u128) -> Self {
        Self(units)
    }

    pub fn pico(self) -> u128 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / 1e12
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl core::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl FromStr for Money {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed(s, Self::SCALE).map(Money)
    }
}

impl fmt::Display for Money {
    /// Plain decimal, trailing zeros trimmed but at least two fractional digits.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = 10u128.pow(Self::SCALE);
        let (int, frac) = (self.0 / unit, self.0 % unit);
        let mut digits = [b'0'; 12];
        let mut rest = frac;
        for d in digits.iter_mut().rev() {
            *d = b'0' + (rest % 10) as u8;
            rest /= 10;
        }
        let mut len = 12;
        while len > 2 && digits[len - 1] == b'0' {
            len -= 1;
        }
        write!(f, "{int}.{}", core::str::from_utf8(&digits[..len]).expect("ascii"))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Price per one million tokens, up to six fractional digits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PricePerMillion(u128);

impl PricePerMillion {
    const SCALE: u32 = 6;

    /// Exact cost of `tokens` tokens: `tokens × price / 10⁶`.
    pub fn cost(self, tokens: u64) -> Money {
        // price is in 10⁻⁶ units per 10⁶ tokens, so one token costs
        // `self.0` units of 10⁻¹².
        Money(u128::from(tokens) * self.0)
    }
}

impl FromStr for PricePerMillion {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_fixed(s, Self::SCALE).map(PricePerMillion)
    }
}

impl fmt::Display for PricePerMillion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Money(self.0 * 1_000_000).fmt(f)
    }
}

impl Serialize for PricePerMillion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PricePerMillion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        // accept both "0.15" and 0.15
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = PricePerMillion;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal price")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Self::Value, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(PricePerMillion(u128::from(v) * 1_000_000))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Self::Value, E> {
                u64::try_from(v).map_err(E::custom).and_then(|u| self.visit_u64(u))
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Self::Value, E> {
                // shortest round-trip representation, then exact parse
                let s = alloc::format!("{v}");
                s.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}
