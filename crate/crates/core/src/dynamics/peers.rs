//! Representative-peer selection and per-country detour averages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DetourTimeline;
use crate::ingest::PeerId;
use crate::types::{Asn, CountryCode};

fn peer_of(t: &DetourTimeline) -> PeerId {
    PeerId {
        ip: t.key.peer_ip,
        asn: t.peer_asn,
    }
}

/// Unique detours seen by each peer. Peers without detours map to zero.
pub fn detours_per_peer<'a>(
    peers: impl IntoIterator<Item = &'a PeerId>,
    timelines: impl IntoIterator<Item = &'a DetourTimeline>,
) -> BTreeMap<PeerId, u64> {
    let mut out: BTreeMap<PeerId, u64> = peers.into_iter().map(|p| (*p, 0)).collect();
    for t in timelines {
        *out.entry(peer_of(t)).or_default() += 1;
    }
    out
}

/// One peer per peer AS: the one with the most unique detours, ties going
/// to the lowest peer IP.
pub fn representative_peers(counts: &BTreeMap<PeerId, u64>) -> BTreeSet<PeerId> {
    let mut best: BTreeMap<Asn, (PeerId, u64)> = BTreeMap::new();
    // BTreeMap order visits lower IPs first, so strict `>` keeps them on ties.
    for (p, n) in counts {
        match best.get(&p.asn) {
            Some((_, m)) if *n <= *m => {}
            _ => {
                best.insert(p.asn, (*p, *n));
            }
        }
    }
    best.into_values().map(|(p, _)| p).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryAverage {
    pub peers: u64,
    pub detours: u64,
    pub average: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CountryAverages {
    pub countries: BTreeMap<CountryCode, CountryAverage>,
    /// Peers whose IP has no country; excluded from the averages.
    pub unknown_country_peers: u64,
    pub unknown_country_detours: u64,
}

/// Detours per peer averaged within each peer country. Only peers present
/// in `counts` take part.
pub fn per_country_average(
    counts: &BTreeMap<PeerId, u64>,
    peer_country: &BTreeMap<PeerId, Option<CountryCode>>,
) -> CountryAverages {
    let mut out = CountryAverages::default();
    for (p, n) in counts {
        match peer_country.get(p).copied().flatten() {
            Some(c) => {
                let e = out.countries.entry(c).or_insert(CountryAverage {
                    peers: 0,
                    detours: 0,
                    average: 0.0,
                });
                e.peers += 1;
                e.detours += n;
            }
            None => {
                out.unknown_country_peers += 1;
                out.unknown_country_detours += n;
            }
        }
    }
    for e in out.countries.values_mut() {
        e.average = e.detours as f64 / e.peers as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn peer(ip: &str, asn: u32) -> PeerId {
        PeerId {
            ip: ip.parse().unwrap(),
            asn: Asn(asn),
        }
    }

    #[test]
    fn most_detours_wins() {
        let counts = BTreeMap::from([
            (peer("10.0.0.1", 1), 3),
            (peer("10.0.0.2", 1), 10),
            (peer("10.0.0.3", 2), 4),
        ]);
        let reps = representative_peers(&counts);
        assert_eq!(
            reps,
            BTreeSet::from([peer("10.0.0.2", 1), peer("10.0.0.3", 2)])
        );
    }

    #[test]
    fn tie_goes_to_lowest_ip() {
        let counts = BTreeMap::from([(peer("10.0.0.9", 1), 5), (peer("10.0.0.10", 1), 5)]);
        assert_eq!(
            representative_peers(&counts),
            BTreeSet::from([peer("10.0.0.9", 1)])
        );
    }

    #[test]
    fn averages() {
        let x = CountryCode::must("BR");
        let y = CountryCode::must("JP");
        let counts = BTreeMap::from([
            (peer("10.0.0.1", 1), 4),
            (peer("10.0.0.2", 2), 6),
            (peer("10.0.0.3", 3), 0),
            (peer("10.0.0.4", 4), 0),
            (peer("10.0.0.5", 5), 0),
            (peer("10.0.0.6", 6), 7),
        ]);
        let countries = BTreeMap::from([
            (peer("10.0.0.1", 1), Some(x)),
            (peer("10.0.0.2", 2), Some(x)),
            (peer("10.0.0.3", 3), Some(y)),
            (peer("10.0.0.4", 4), Some(y)),
            (peer("10.0.0.5", 5), Some(y)),
            (peer("10.0.0.6", 6), None),
        ]);
        let a = per_country_average(&counts, &countries);
        assert_eq!(a.countries[&x].average, 5.0);
        assert_eq!(a.countries[&y].average, 0.0);
        assert_eq!(a.countries[&y].peers, 3);
        assert_eq!((a.unknown_country_peers, a.unknown_country_detours), (1, 7));
    }

    proptest! {
        #[test]
        fn averages_conserve_detours(rows in proptest::collection::vec((0u8..8, 0u64..50, 0u8..4), 0..40)) {
            let codes = ["BR", "JP", "DE"];
            let mut counts = BTreeMap::new();
            let mut countries = BTreeMap::new();
            for (i, (asn, n, c)) in rows.iter().enumerate() {
                let p = PeerId { ip: std::net::IpAddr::from([10, 0, 0, i as u8]), asn: Asn(*asn as u32) };
                counts.insert(p, *n);
                countries.insert(p, codes.get(*c as usize).map(|s| CountryCode::must(s)));
            }
            let a = per_country_average(&counts, &countries);
            let total: f64 = a.countries.values().map(|e| e.average * e.peers as f64).sum();
            let known: u64 = counts.iter().filter(|(p, _)| countries[*p].is_some()).map(|(_, n)| n).sum();
            prop_assert!((total - known as f64).abs() < 1e-6);

            let reps = representative_peers(&counts);
            let asns: BTreeSet<Asn> = counts.keys().map(|p| p.asn).collect();
            prop_assert_eq!(reps.len(), asns.len());
            for r in &reps {
                let max = counts.iter().filter(|(p, _)| p.asn == r.asn).map(|(_, n)| *n).max().unwrap();
                prop_assert_eq!(counts[r], max);
            }
        }
    }
}
