//! Reference detour judgement by exhaustive window enumeration.
//!
//! Deliberately naive: every (origin, return) index pair is tried and the
//! rules are checked hop by hop. Used to cross-check the single-pass
//! classifier.

use crate::detect::{DetourSpan, PathClass};
use crate::types::{CountryCode, CountrySet};

/// Geolocation of one hop as seen by the oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleHop {
    pub countries: CountrySet,
    /// The hop only had ambiguous pseudo-code evidence.
    pub ambiguous_only: bool,
}

impl OracleHop {
    pub fn known(countries: CountrySet) -> Self {
        OracleHop {
            countries,
            ambiguous_only: false,
        }
    }

    fn definitely_foreign(&self, home: CountryCode) -> bool {
        !self.countries.is_empty() && !self.countries.contains(home)
    }

    fn may_be_home(&self, home: CountryCode) -> bool {
        self.countries.contains(home)
    }
}

pub fn oracle_detect(hops: &[OracleHop]) -> PathClass {
    let n = hops.len();
    if n < 3 {
        return PathClass::NoDetour;
    }
    let home = match (
        hops[0].countries.singleton(),
        hops[n - 1].countries.singleton(),
    ) {
        (Some(a), Some(b)) if a == b => a,
        _ => return PathClass::NotSameCountryEndpoints,
    };

    let mut found: Option<(usize, usize)> = None;
    'search: for origin in 0..n {
        for ret in origin + 2..n {
            let prefix_home = (0..=origin).all(|i| hops[i].may_be_home(home));
            let middle_foreign = (origin + 1..ret).all(|i| hops[i].definitely_foreign(home));
            let returns = hops[ret].may_be_home(home);
            if prefix_home && middle_foreign && returns {
                found = Some((origin, ret));
                break 'search;
            }
        }
    }

    if let Some((origin, ret)) = found {
        let repeat = (ret + 1..n).any(|i| hops[i].definitely_foreign(home));
        return PathClass::Definite(DetourSpan {
            home,
            origin,
            foreign_start: origin + 1,
            ret,
            repeat_departure: repeat,
        });
    }

    if let Some(h) = hops.iter().find(|h| h.countries.is_empty()) {
        return if h.ambiguous_only {
            PathClass::AmbiguousCode
        } else {
            PathClass::UnknownGeo
        };
    }
    if hops
        .iter()
        .any(|h| h.countries.len() > 1 && h.countries.contains(home))
    {
        PathClass::PossibleOnly
    } else {
        PathClass::NoDetour
    }
}
