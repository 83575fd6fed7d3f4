//! Path classification over per-hop country sets.
//!
//! The walk is a single left-to-right pass. Endpoints must be the same
//! singleton `{A}`. A hop is *foreign* when its set is non-empty and lacks
//! `A`; it *may be home* when the set contains `A`. The first run of foreign
//! hops, bracketed by home-capable hops, is the detour. Any hop without a
//! location seen before the detour closes discards the path.

use crate::geo::HopGeo;
use crate::types::CountryCode;

/// Indices into the path of a definite detour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetourSpan {
    pub home: CountryCode,
    /// Last home-capable hop before the foreign run.
    pub origin: usize,
    /// First foreign hop.
    pub foreign_start: usize,
    /// One past the last foreign hop; also the return hop.
    pub ret: usize,
    /// The path leaves the home country again after returning.
    pub repeat_departure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathClass {
    Definite(DetourSpan),
    PossibleOnly,
    NoDetour,
    UnknownGeo,
    AmbiguousCode,
    NotSameCountryEndpoints,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum HopKind {
    /// Set contains the home country.
    Home,
    Foreign,
    Unknown,
    Ambiguous,
}

fn kind(hop: &HopGeo, home: CountryCode) -> HopKind {
    if hop.countries.is_empty() {
        if hop.ambiguous_only {
            HopKind::Ambiguous
        } else {
            HopKind::Unknown
        }
    } else if hop.countries.contains(home) {
        HopKind::Home
    } else {
        HopKind::Foreign
    }
}

enum Phase {
    AtHome { possible: bool },
    Abroad { origin: usize, start: usize },
    Returned(DetourSpan),
}

pub fn classify_hops(hops: &[HopGeo]) -> PathClass {
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

    let mut phase = Phase::AtHome { possible: false };
    for (i, hop) in hops.iter().enumerate().skip(1) {
        let k = kind(hop, home);
        phase = match (phase, k) {
            (Phase::Returned(mut span), HopKind::Foreign) => {
                span.repeat_departure = true;
                Phase::Returned(span)
            }
            (p @ Phase::Returned(_), _) => p,
            (_, HopKind::Unknown) => return PathClass::UnknownGeo,
            (_, HopKind::Ambiguous) => return PathClass::AmbiguousCode,
            (Phase::AtHome { .. }, HopKind::Foreign) => Phase::Abroad {
                origin: i - 1,
                start: i,
            },
            (Phase::AtHome { possible }, HopKind::Home) => Phase::AtHome {
                possible: possible || hop.countries.len() > 1,
            },
            (p @ Phase::Abroad { .. }, HopKind::Foreign) => p,
            (Phase::Abroad { origin, start }, HopKind::Home) => Phase::Returned(DetourSpan {
                home,
                origin,
                foreign_start: start,
                ret: i,
                repeat_departure: false,
            }),
        };
    }

    match phase {
        Phase::Returned(span) => PathClass::Definite(span),
        Phase::AtHome { possible: true } => PathClass::PossibleOnly,
        Phase::AtHome { possible: false } => PathClass::NoDetour,
        Phase::Abroad { .. } => unreachable!("the final hop is home"),
    }
}
