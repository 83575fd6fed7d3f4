//! Shared domain primitives: AS numbers, country codes and country sets.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A 32-bit autonomous system number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Asn(pub u32);

impl Asn {
    /// Marker standing in for an AS_SET segment inside a normalized path.
    ///
    /// AS 0 is reserved and never legitimately appears in an AS path, so the
    /// marker cannot collide with a real hop.
    pub const AS_SET: Asn = Asn(0);

    pub fn is_as_set(self) -> bool {
        self == Self::AS_SET
    }

    /// Private-use, documentation and otherwise reserved numbers. These never
    /// carry geolocation.
    pub fn is_reserved(self) -> bool {
        matches!(self.0,
            0
            | 23456
            | 64496..=65551
            | 4_200_000_000..=u32::MAX)
    }
}

impl fmt::Display for Asn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Asn {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let s = s
            .strip_prefix("AS")
            .or_else(|| s.strip_prefix("as"))
            .unwrap_or(s);
        s.parse().map(Asn)
    }
}

impl From<u32> for Asn {
    fn from(v: u32) -> Self {
        Asn(v)
    }
}

/// Pseudo-codes that geolocation databases emit for non-country answers.
pub const AMBIGUOUS_CODES: [&str; 5] = ["A1", "A2", "O1", "EU", "AP"];

/// An ISO-3166 alpha-2 country code, stored upper-case.
///
/// Ambiguous pseudo-codes cannot be represented; see [`parse_country`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("country codes are ASCII")
    }

    /// Builds a code from a literal, panicking on anything that is not a
    /// concrete alpha-2 code. Intended for constants and tests.
    pub fn must(s: &str) -> Self {
        match parse_country(s) {
            Ok(CountryEvidence::Country(c)) => c,
            other => panic!("not a concrete country code: {s:?} ({other:?})"),
        }
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match parse_country(&s) {
            Ok(CountryEvidence::Country(c)) => Ok(c),
            Ok(CountryEvidence::Ambiguous) => Err(serde::de::Error::custom(format!(
                "ambiguous pseudo-code {s:?} where a country is required"
            ))),
            Err(e) => Err(serde::de::Error::custom(e)),
        }
    }
}

/// Result of reading a country field from an evidence source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountryEvidence {
    Country(CountryCode),
    /// One of [`AMBIGUOUS_CODES`]; dropped from every country set.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid country code {0:?}")]
pub struct InvalidCountry(pub String);

/// Parses a two-letter code, case-insensitively.
pub fn parse_country(s: &str) -> Result<CountryEvidence, InvalidCountry> {
    let t = s.trim();
    let b = t.as_bytes();
    if b.len() != 2 || !b.iter().all(|c| c.is_ascii_alphanumeric()) {
        return Err(InvalidCountry(s.to_string()));
    }
    let code = CountryCode([b[0].to_ascii_uppercase(), b[1].to_ascii_uppercase()]);
    if AMBIGUOUS_CODES.contains(&code.as_str()) {
        Ok(CountryEvidence::Ambiguous)
    } else if b.iter().all(|c| c.is_ascii_alphabetic()) {
        Ok(CountryEvidence::Country(code))
    } else {
        Err(InvalidCountry(s.to_string()))
    }
}

/// Set of countries attached to an AS, prefix or IP. Empty means unknown.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CountrySet(BTreeSet<CountryCode>);

impl CountrySet {
    pub const EMPTY: CountrySet = CountrySet(BTreeSet::new());

    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(c: CountryCode) -> Self {
        let mut s = Self::new();
        s.insert(c);
        s
    }

    pub fn insert(&mut self, c: CountryCode) -> bool {
        self.0.insert(c)
    }

    pub fn extend(&mut self, other: &CountrySet) {
        self.0.extend(other.0.iter().copied());
    }

    pub fn contains(&self, c: CountryCode) -> bool {
        self.0.contains(&c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The sole member of a singleton set.
    pub fn singleton(&self) -> Option<CountryCode> {
        if self.0.len() == 1 {
            self.0.iter().next().copied()
        } else {
            None
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = CountryCode> + '_ {
        self.0.iter().copied()
    }

    pub fn is_subset(&self, other: &CountrySet) -> bool {
        self.0.is_subset(&other.0)
    }
}

impl FromIterator<CountryCode> for CountrySet {
    fn from_iter<I: IntoIterator<Item = CountryCode>>(iter: I) -> Self {
        CountrySet(iter.into_iter().collect())
    }
}

impl fmt::Display for CountrySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(c.as_str())?;
        }
        f.write_str("}")
    }
}

/// Shorthand for building a set from literals, e.g. `countries(&["US", "BR"])`.
pub fn countries(codes: &[&str]) -> CountrySet {
    codes.iter().map(|c| CountryCode::must(c)).collect()
}
