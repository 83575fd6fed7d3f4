//! Detour detection over normalized route records.

pub mod batch;
pub mod classify;
pub mod relationship;

use std::net::IpAddr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::geo::{AsGeoMap, HopGeo};
use crate::ingest::RouteRecord;
use crate::types::{Asn, CountryCode, CountrySet};

pub use batch::{detect_all, write_verdicts_jsonl, DetectCounters, DetectRun};
pub use classify::{classify_hops, DetourSpan, PathClass};
pub use relationship::{Relation, RelationshipDb, RelationshipError};

/// Identity of a detour across epochs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DetourKey {
    pub peer_ip: IpAddr,
    pub prefix: Ipv4Net,
    pub as_path: Vec<Asn>,
}

impl DetourKey {
    pub fn of(r: &RouteRecord) -> Self {
        DetourKey {
            peer_ip: r.peer_ip,
            prefix: r.prefix,
            as_path: r.as_path.clone(),
        }
    }
}

impl std::fmt::Display for DetourKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} ", self.peer_ip, self.prefix)?;
        for (i, a) in self.as_path.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetourRecord {
    pub key: DetourKey,
    pub peer_asn: Asn,
    pub epoch: u32,
    pub home_country: CountryCode,
    pub detour_origin_asn: Asn,
    pub detour_destination_asns: Vec<Asn>,
    pub detour_destination_countries: CountrySet,
    pub detour_return_asn: Asn,
    pub prefix_origin_asn: Asn,
    pub foreign_hop_count: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repeat_departure: bool,
}

impl DetourRecord {
    /// First foreign AS, used as the detour destination in reports.
    pub fn destination_asn(&self) -> Asn {
        self.detour_destination_asns[0]
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self
            .detour_destination_countries
            .contains(self.home_country)
        {
            return Err(format!(
                "home {} inside destinations {}",
                self.home_country, self.detour_destination_countries
            ));
        }
        if self.foreign_hop_count == 0
            || self.foreign_hop_count != self.detour_destination_asns.len()
        {
            return Err(format!(
                "foreign_hop_count {} vs {} destination ASes",
                self.foreign_hop_count,
                self.detour_destination_asns.len()
            ));
        }
        let path = &self.key.as_path;
        let pos = |a: Asn| path.iter().position(|x| *x == a);
        let o = pos(self.detour_origin_asn).ok_or("origin not on path")?;
        let r = pos(self.detour_return_asn).ok_or("return not on path")?;
        let window = path.get(o + 1..r).ok_or("return precedes origin")?;
        if window != self.detour_destination_asns.as_slice() {
            return Err(format!(
                "destinations {:?} are not the hops between origin and return",
                self.detour_destination_asns
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    DefiniteDetour,
    PossibleOnly,
    NoDetour,
    DiscardedUnknownGeo,
    DiscardedAmbiguousCode,
    NotSameCountryEndpoints,
    FilteredByPeering,
}

impl Outcome {
    pub const ALL: [Outcome; 7] = [
        Outcome::DefiniteDetour,
        Outcome::PossibleOnly,
        Outcome::NoDetour,
        Outcome::DiscardedUnknownGeo,
        Outcome::DiscardedAmbiguousCode,
        Outcome::NotSameCountryEndpoints,
        Outcome::FilteredByPeering,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::DefiniteDetour => "definite_detour",
            Outcome::PossibleOnly => "possible_only",
            Outcome::NoDetour => "no_detour",
            Outcome::DiscardedUnknownGeo => "discarded_unknown_geo",
            Outcome::DiscardedAmbiguousCode => "discarded_ambiguous_code",
            Outcome::NotSameCountryEndpoints => "not_same_country_endpoints",
            Outcome::FilteredByPeering => "filtered_by_peering",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub outcome: Outcome,
    /// Present for definite detours, and for filtered ones so that the
    /// peering report can list what was removed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detour: Option<DetourRecord>,
}

impl DetectionVerdict {
    fn plain(outcome: Outcome) -> Self {
        DetectionVerdict {
            outcome,
            detour: None,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum DetectError {
    #[error("detour endpoints {origin}/{ret} not on path {path:?}")]
    EndpointsOffPath {
        origin: Asn,
        ret: Asn,
        path: Vec<Asn>,
    },
    #[error("detour record violates invariants: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectOptions {
    pub peering_filter: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            peering_filter: true,
        }
    }
}

/// Classifies a path given per-AS geolocation, without peering filtering.
pub fn classify_path(path: &[Asn], geo: &AsGeoMap) -> PathClass {
    let hops: Vec<HopGeo> = path.iter().map(|a| geo.hop(*a)).collect();
    classify_hops(&hops)
}

pub fn detect(
    record: &RouteRecord,
    geo: &AsGeoMap,
    rel: &RelationshipDb,
    opts: DetectOptions,
) -> Result<DetectionVerdict, DetectError> {
    let span = match classify_path(&record.as_path, geo) {
        PathClass::Definite(s) => s,
        PathClass::PossibleOnly => return Ok(DetectionVerdict::plain(Outcome::PossibleOnly)),
        PathClass::NoDetour => return Ok(DetectionVerdict::plain(Outcome::NoDetour)),
        PathClass::UnknownGeo => return Ok(DetectionVerdict::plain(Outcome::DiscardedUnknownGeo)),
        PathClass::AmbiguousCode => {
            return Ok(DetectionVerdict::plain(Outcome::DiscardedAmbiguousCode))
        }
        PathClass::NotSameCountryEndpoints => {
            return Ok(DetectionVerdict::plain(Outcome::NotSameCountryEndpoints))
        }
    };

    let path = &record.as_path;
    let destinations = path[span.foreign_start..span.ret].to_vec();
    let mut dest_countries = CountrySet::new();
    for a in &destinations {
        dest_countries.extend(geo.countries(*a));
    }
    let det = DetourRecord {
        key: DetourKey::of(record),
        peer_asn: record.peer_asn,
        epoch: record.epoch,
        home_country: span.home,
        detour_origin_asn: path[span.origin],
        foreign_hop_count: destinations.len(),
        detour_destination_asns: destinations,
        detour_destination_countries: dest_countries,
        detour_return_asn: path[span.ret],
        prefix_origin_asn: record.origin_asn,
        repeat_departure: span.repeat_departure,
    };
    det.check_invariants().map_err(DetectError::Invariant)?;

    let outcome = if opts.peering_filter && filter_peering(&det, path, rel, record.peer_asn)? {
        Outcome::FilteredByPeering
    } else {
        Outcome::DefiniteDetour
    };
    Ok(DetectionVerdict {
        outcome,
        detour: Some(det),
    })
}

/// True when the detour may be explained by a direct business relationship
/// between the origin and return ASes.
///
/// A provider-customer link between them is always preferred. A peering link
/// is only usable when the traffic enters it from the peer itself or from one
/// of its customers, i.e. every hop from the peer up to the origin climbs a
/// customer-to-provider edge.
pub fn filter_peering(
    detour: &DetourRecord,
    path: &[Asn],
    rel: &RelationshipDb,
    peer_asn: Asn,
) -> Result<bool, DetectError> {
    let o = detour.detour_origin_asn;
    let r = detour.detour_return_asn;
    let off_path = || DetectError::EndpointsOffPath {
        origin: o,
        ret: r,
        path: path.to_vec(),
    };
    let o_pos = path.iter().position(|a| *a == o).ok_or_else(off_path)?;
    if !path.contains(&r) {
        return Err(off_path());
    }
    match rel.get(o, r) {
        None => Ok(false),
        Some(Relation::P2c | Relation::C2p) => Ok(true),
        Some(Relation::P2p) => {
            if o == peer_asn {
                return Ok(true);
            }
            let start = path.iter().position(|a| *a == peer_asn).unwrap_or(0);
            if start >= o_pos {
                return Ok(false);
            }
            Ok(path[start..=o_pos]
                .windows(2)
                .all(|w| rel.get(w[0], w[1]) == Some(Relation::C2p)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{EvidenceTag, Located};
    use crate::types::countries;

    fn geo(entries: &[(u32, &[&str])]) -> AsGeoMap {
        let mut g = AsGeoMap::new();
        for (asn, cs) in entries {
            let loc = Located {
                countries: countries(cs),
                ambiguous: false,
            };
            g.add(Asn(*asn), EvidenceTag::Prefix, &loc);
        }
        g
    }

    fn route(path: &[u32]) -> RouteRecord {
        RouteRecord {
            peer_ip: "192.0.2.1".parse().unwrap(),
            peer_asn: Asn(path[0]),
            prefix: "203.0.113.0/24".parse().unwrap(),
            as_path: path.iter().map(|a| Asn(*a)).collect(),
            origin_asn: Asn(*path.last().unwrap()),
            epoch: 0,
            snapshot_time: 0,
        }
    }

    fn outcome(sets: &[&[&str]]) -> (Outcome, Option<DetourRecord>) {
        let entries: Vec<(u32, &[&str])> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32 + 1, *s))
            .collect();
        let g = geo(&entries);
        let path: Vec<u32> = (1..=sets.len() as u32).collect();
        let v = detect(
            &route(&path),
            &g,
            &RelationshipDb::new(),
            DetectOptions::default(),
        )
        .unwrap();
        (v.outcome, v.detour)
    }

    #[test]
    fn worked_examples() {
        let (o, d) = outcome(&[&["US"], &["IN"], &["US"]]);
        assert_eq!(o, Outcome::DefiniteDetour);
        assert_eq!(d.unwrap().detour_destination_countries, countries(&["IN"]));

        let (o, d) = outcome(&[&["US"], &["IN", "CN"], &["US"]]);
        assert_eq!(o, Outcome::DefiniteDetour);
        assert_eq!(
            d.unwrap().detour_destination_countries,
            countries(&["CN", "IN"])
        );

        assert_eq!(
            outcome(&[&["US"], &["US", "IN"], &["US"]]).0,
            Outcome::PossibleOnly
        );
        assert_eq!(
            outcome(&[&["US"], &[], &["US"]]).0,
            Outcome::DiscardedUnknownGeo
        );

        let (o, d) = outcome(&[&["US"], &["BR"], &["US"], &[], &["US"]]);
        assert_eq!(o, Outcome::DefiniteDetour);
        let d = d.unwrap();
        assert_eq!(d.detour_destination_asns, vec![Asn(2)]);
        assert_eq!(d.detour_return_asn, Asn(3));

        let (_, d) = outcome(&[&["US"], &["IN"], &["CN"], &["IN"], &["US"]]);
        let d = d.unwrap();
        assert_eq!(d.foreign_hop_count, 3);
        assert_eq!(d.detour_destination_asns, vec![Asn(2), Asn(3), Asn(4)]);

        let (_, d) = outcome(&[&["US"], &["US", "BR"], &["CN"], &["US"]]);
        let d = d.unwrap();
        assert_eq!(d.detour_origin_asn, Asn(2));
        assert_eq!(d.home_country, CountryCode::must("US"));

        assert_eq!(
            outcome(&[&["US", "BR"], &["IN"], &["US"]]).0,
            Outcome::NotSameCountryEndpoints
        );
    }

    #[test]
    fn ambiguous_only_hop() {
        let mut g = geo(&[(1, &["DE"]), (3, &["DE"])]);
        g.add(
            Asn(2),
            EvidenceTag::Prefix,
            &Located {
                countries: CountrySet::new(),
                ambiguous: true,
            },
        );
        let v = detect(
            &route(&[1, 2, 3]),
            &g,
            &RelationshipDb::new(),
            DetectOptions::default(),
        )
        .unwrap();
        assert_eq!(v.outcome, Outcome::DiscardedAmbiguousCode);
        assert!(v.detour.is_none());
    }

    #[test]
    fn as_set_hop_is_unknown() {
        let g = geo(&[(1, &["US"]), (3, &["US"])]);
        let mut r = route(&[1, 2, 3]);
        r.as_path[1] = Asn::AS_SET;
        let v = detect(&r, &g, &RelationshipDb::new(), DetectOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::DiscardedUnknownGeo);
    }

    #[test]
    fn transit_through_foreign_as() {
        // AS3 (peer) -> AS2 -> AS1 -> AS0 announcing the prefix
        let g = geo(&[(3, &["US"]), (2, &["US"]), (1, &["JP"]), (1000, &["US"])]);
        let mut r = route(&[3, 2, 1, 1000]);
        r.prefix = "198.51.100.0/24".parse().unwrap();
        let d = detect(&r, &g, &RelationshipDb::new(), DetectOptions::default())
            .unwrap()
            .detour
            .unwrap();
        assert_eq!(d.detour_origin_asn, Asn(2));
        assert_eq!(d.detour_destination_asns, vec![Asn(1)]);
        assert_eq!(d.detour_return_asn, Asn(1000));
        assert_eq!(d.prefix_origin_asn, Asn(1000));
    }

    fn us_in_us() -> (AsGeoMap, RouteRecord) {
        let g = geo(&[(1, &["US"]), (2, &["US"]), (3, &["IN"]), (4, &["US"])]);
        (g, route(&[1, 2, 3, 4]))
    }

    fn verdict(rel: &RelationshipDb) -> Outcome {
        let (g, r) = us_in_us();
        detect(&r, &g, rel, DetectOptions::default())
            .unwrap()
            .outcome
    }

    #[test]
    fn peering_filter_rules() {
        let mut rel = RelationshipDb::new();
        assert_eq!(verdict(&rel), Outcome::DefiniteDetour);

        rel.insert_p2c(Asn(4), Asn(2));
        assert_eq!(verdict(&rel), Outcome::FilteredByPeering);

        let mut rel = RelationshipDb::new();
        rel.insert_p2p(Asn(2), Asn(4));
        rel.insert_p2c(Asn(2), Asn(1));
        assert_eq!(
            verdict(&rel),
            Outcome::FilteredByPeering,
            "peer is a customer of O"
        );

        let mut rel = RelationshipDb::new();
        rel.insert_p2p(Asn(2), Asn(4));
        rel.insert_p2p(Asn(1), Asn(2));
        assert_eq!(verdict(&rel), Outcome::DefiniteDetour, "p2p edge before O");

        let mut rel = RelationshipDb::new();
        rel.insert_p2p(Asn(2), Asn(4));
        assert_eq!(
            verdict(&rel),
            Outcome::DefiniteDetour,
            "unknown edge before O"
        );
    }

    #[test]
    fn peering_filter_origin_is_peer() {
        let g = geo(&[(1, &["US"]), (3, &["IN"]), (4, &["US"])]);
        let r = route(&[1, 3, 4]);
        let mut rel = RelationshipDb::new();
        rel.insert_p2p(Asn(1), Asn(4));
        let v = detect(&r, &g, &rel, DetectOptions::default()).unwrap();
        assert_eq!(v.outcome, Outcome::FilteredByPeering);
        let v = detect(
            &r,
            &g,
            &rel,
            DetectOptions {
                peering_filter: false,
            },
        )
        .unwrap();
        assert_eq!(v.outcome, Outcome::DefiniteDetour);
    }

    #[test]
    fn peering_contract_violation() {
        let (g, r) = us_in_us();
        let det = detect(&r, &g, &RelationshipDb::new(), DetectOptions::default())
            .unwrap()
            .detour
            .unwrap();
        let err = filter_peering(&det, &[Asn(9), Asn(8)], &RelationshipDb::new(), Asn(9));
        assert!(matches!(err, Err(DetectError::EndpointsOffPath { .. })));
    }
}
