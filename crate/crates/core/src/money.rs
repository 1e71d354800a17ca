//! Exact amounts and probabilities.
//!
//! Budget feasibility is a hard indicator, so every amount that can reach a
//! comparison against the budget is an exact rational. Decimal text such as
//! `"12.50"` or `"0.35"` parses exactly; amounts that are not terminating
//! decimals are written as `"num/den"`.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AmountError {
    #[error("cannot parse `{0}` as an exact number")]
    Parse(String),
    #[error("probability {0} is outside [0, 1]")]
    ProbabilityRange(String),
    #[error("non-finite value")]
    NonFinite,
}

/// Parses `"-12.5"`, `"3"`, `"1/3"`, `"2.5e-3"` into an exact rational.
pub fn parse_rational(text: &str) -> Result<Rational, AmountError> {
    let s = text.trim();
    let err = || AmountError::Parse(text.to_string());
    if s.is_empty() {
        return Err(err());
    }
    if let Some((num, den)) = s.split_once('/') {
        let num: BigInt = num.trim().parse().map_err(|_| err())?;
        let den: BigInt = den.trim().parse().map_err(|_| err())?;
        if den.is_zero() {
            return Err(err());
        }
        return Ok(BigRational::new(num, den));
    }
    let (mantissa, exponent) = match s.find(['e', 'E']) {
        Some(pos) => {
            let exp: i32 = s[pos + 1..].parse().map_err(|_| err())?;
            (&s[..pos], exp)
        }
        None => (s, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let joined = format!("{int_part}{frac_part}");
    let mut numer: BigInt = if joined.is_empty() {
        BigInt::zero()
    } else {
        joined.parse().map_err(|_| err())?
    };
    if negative {
        numer = -numer;
    }
    let scale = exponent - frac_part.len() as i32;
    let ten = BigInt::from(10u8);
    let value = if scale >= 0 {
        BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
    } else {
        BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
    };
    Ok(value)
}

/// Converts a float through its shortest round-trip decimal form, so `0.35_f64`
/// becomes exactly 7/20 rather than the nearest dyadic fraction.
pub fn rational_from_f64(value: f64) -> Result<Rational, AmountError> {
    if !value.is_finite() {
        return Err(AmountError::NonFinite);
    }
    parse_rational(&format!("{value}"))
}

pub fn rational_to_f64(value: &Rational) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// Exact decimal text when the value terminates within 12 places, `num/den`
/// otherwise.
pub fn format_rational(value: &Rational) -> String {
    let value = value.reduced();
    let den = value.denom().clone();
    if den.is_one() {
        return value.numer().to_string();
    }
    let mut rest = den.clone();
    let (mut twos, mut fives) = (0usize, 0usize);
    let two = BigInt::from(2u8);
    let five = BigInt::from(5u8);
    while rest.is_even() {
        rest /= &two;
        twos += 1;
    }
    while (&rest % &five).is_zero() {
        rest /= &five;
        fives += 1;
    }
    let places = twos.max(fives);
    if !rest.is_one() || places > 12 {
        return format!("{}/{}", value.numer(), den);
    }
    let scaled = value.numer() * num_traits::pow(BigInt::from(10u8), places) / &den;
    let negative = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let digits = format!("{digits:0>width$}", width = places + 1);
    let (int_part, frac_part) = digits.split_at(digits.len() - places);
    let frac_part = frac_part.trim_end_matches('0');
    let sign = if negative { "-" } else { "" };
    if frac_part.is_empty() {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part}")
    }
}

/// An exact amount of credits. May be negative (a soft-mode ledger can
/// overspend).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Credits(Rational);

impl Credits {
    pub fn zero() -> Self {
        Credits(Rational::zero())
    }

    pub fn from_int(units: i64) -> Self {
        Credits(Rational::from_integer(units.into()))
    }

    pub fn from_cents(cents: i64) -> Self {
        Credits(Rational::new(cents.into(), 100.into()))
    }

    pub fn from_rational(value: Rational) -> Self {
        Credits(value)
    }

    pub fn from_f64(value: f64) -> Result<Self, AmountError> {
        rational_from_f64(value).map(Credits)
    }

    pub fn as_rational(&self) -> &Rational {
        &self.0
    }

    pub fn into_rational(self) -> Rational {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn scale(&self, factor: &Rational) -> Credits {
        Credits(&self.0 * factor)
    }
}

impl Default for Credits {
    fn default() -> Self {
        Credits::zero()
    }
}

impl fmt::Display for Credits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl fmt::Debug for Credits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Credits({self})")
    }
}

impl FromStr for Credits {
    type Err = AmountError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_rational(s).map(Credits)
    }
}

impl From<i64> for Credits {
    fn from(value: i64) -> Self {
        Credits::from_int(value)
    }
}

impl Add for Credits {
    type Output = Credits;
    fn add(self, rhs: Credits) -> Credits {
        Credits(self.0 + rhs.0)
    }
}

impl<'a> Add<&'a Credits> for &'a Credits {
    type Output = Credits;
    fn add(self, rhs: &Credits) -> Credits {
        Credits(&self.0 + &rhs.0)
    }
}

impl AddAssign<&Credits> for Credits {
    fn add_assign(&mut self, rhs: &Credits) {
        self.0 += &rhs.0;
    }
}

impl Sub for Credits {
    type Output = Credits;
    fn sub(self, rhs: Credits) -> Credits {
        Credits(self.0 - rhs.0)
    }
}

impl<'a> Sub<&'a Credits> for &'a Credits {
    type Output = Credits;
    fn sub(self, rhs: &Credits) -> Credits {
        Credits(&self.0 - &rhs.0)
    }
}

impl SubAssign<&Credits> for Credits {
    fn sub_assign(&mut self, rhs: &Credits) {
        self.0 -= &rhs.0;
    }
}

impl Neg for Credits {
    type Output = Credits;
    fn neg(self) -> Credits {
        Credits(-self.0)
    }
}

impl Mul<&Rational> for &Credits {
    type Output = Credits;
    fn mul(self, rhs: &Rational) -> Credits {
        Credits(&self.0 * rhs)
    }
}

impl Div<&Probability> for &Credits {
    type Output = Credits;
    /// Panics on a zero probability; callers clamp first.
    fn div(self, rhs: &Probability) -> Credits {
        Credits(&self.0 / &rhs.0)
    }
}

impl Sum for Credits {
    fn sum<I: Iterator<Item = Credits>>(iter: I) -> Credits {
        iter.fold(Credits::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Credits> for Credits {
    fn sum<I: Iterator<Item = &'a Credits>>(iter: I) -> Credits {
        iter.fold(Credits::zero(), |mut acc, x| {
            acc += x;
            acc
        })
    }
}

/// An exact probability in `[0, 1]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Probability(Rational);

impl Probability {
    pub fn new(value: Rational) -> Result<Self, AmountError> {
        if value.is_negative() || value > Rational::one() {
            return Err(AmountError::ProbabilityRange(format_rational(&value)));
        }
        Ok(Probability(value))
    }

    pub fn one() -> Self {
        Probability(Rational::one())
    }

    pub fn zero() -> Self {
        Probability(Rational::zero())
    }

    /// `permille / 1000`, for fixtures.
    pub fn from_permille(permille: u32) -> Result<Self, AmountError> {
        Probability::new(Rational::new(permille.into(), 1000.into()))
    }

    pub fn from_f64(value: f64) -> Result<Self, AmountError> {
        Probability::new(rational_from_f64(value)?)
    }

    /// Rounds to a grid of `1e-9` after clamping into `[0, 1]`; used for
    /// model outputs that are real numbers.
    pub fn from_f64_lossy(value: f64) -> Self {
        let v = if value.is_finite() { value.clamp(0.0, 1.0) } else { 0.0 };
        let grid = 1_000_000_000i64;
        let numer = (v * grid as f64).round() as i64;
        Probability(Rational::new(numer.into(), grid.into()))
    }

    pub fn as_rational(&self) -> &Rational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        rational_to_f64(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Clamps into `[floor, 1]`.
    pub fn clamp_min(&self, floor: &Probability) -> Probability {
        if self.0 < floor.0 {
            floor.clone()
        } else {
            self.clone()
        }
    }
}

impl PartialOrd for Probability {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Probability {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rational(&self.0))
    }
}

impl fmt::Debug for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Probability({self})")
    }
}

impl FromStr for Probability {
    type Err = AmountError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Probability::new(parse_rational(s)?)
    }
}

struct ExactVisitor;

impl Visitor<'_> for ExactVisitor {
    type Value = Rational;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an exact number as a decimal string, `num/den` string, or JSON number")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Rational, E> {
        parse_rational(v).map_err(E::custom)
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
        Ok(Rational::from_integer(v.into()))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
        Ok(Rational::from_integer(v.into()))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
        rational_from_f64(v).map_err(E::custom)
    }
}

fn deserialize_exact<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
    d.deserialize_any(ExactVisitor)
}

impl Serialize for Credits {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Credits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        deserialize_exact(d).map(Credits)
    }
}

impl Serialize for Probability {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(&self.0))
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = deserialize_exact(d)?;
        Probability::new(value).map_err(de::Error::custom)
    }
}

/// Serde adapter for bare `Rational` fields.
pub mod exact {
    use super::*;

    pub fn serialize<S: Serializer>(value: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(value))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        deserialize_exact(d)
    }

    pub mod option {
        use super::*;

        pub fn serialize<S: Serializer>(value: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
            match value {
                Some(v) => s.serialize_some(&format_rational(v)),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
            #[derive(Deserialize)]
            struct Wrap(#[serde(deserialize_with = "super::deserialize")] Rational);
            Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
        }
    }
}
