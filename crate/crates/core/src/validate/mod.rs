//! Data-plane validation of detected detours against traceroutes.

pub mod traceroute;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::detect::{DetourKey, DetourRecord};
use crate::geo::{map_infra_ip_to_as, GeoDbStack, IpAsMap, RoutingTable};
use crate::types::{Asn, CountryCode};

pub use traceroute::{
    load_traceroutes, read_traceroutes, write_traceroutes, TracerouteError, TracerouteHop,
    TracerouteResult,
};

pub const MIN_RESPONSIVE_HOPS: usize = 3;
pub const DEFAULT_RTT_RATIO: f64 = 10.0;
pub const DEFAULT_RTT_FLOOR_MS: f64 = 5.0;

/// Which detour AS must follow the origin for a traceroute to be congruent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    #[default]
    Destination,
    Return,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub rtt_ratio: f64,
    pub rtt_floor_ms: f64,
    pub anchor: Anchor,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            rtt_ratio: DEFAULT_RTT_RATIO,
            rtt_floor_ms: DEFAULT_RTT_FLOOR_MS,
            anchor: Anchor::Destination,
        }
    }
}

/// Maps router IPs to ASes: IP-to-AS datasets first, then longest match.
#[derive(Debug, Clone, Default)]
pub struct AsMapper {
    pub datasets: Vec<IpAsMap>,
    pub table: RoutingTable,
}

impl AsMapper {
    pub fn asn(&self, ip: Ipv4Addr) -> Option<Asn> {
        map_infra_ip_to_as(ip, &self.datasets, &self.table)
    }
}

/// AS-level path of a traceroute. Unmapped hops stay as `None` gaps and
/// runs of equal entries collapse.
pub fn hops_to_as_path(tr: &TracerouteResult, mapper: &AsMapper) -> Vec<Option<Asn>> {
    let mut out: Vec<Option<Asn>> = Vec::new();
    for (ip, _) in tr.responsive() {
        let a = mapper.asn(ip);
        if out.last() != Some(&a) {
            out.push(a);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    Exact,
    Deletion,
    Insertion,
    Mix,
    Incongruent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CongruenceVerdict {
    pub usable: bool,
    pub congruent: bool,
    pub mutation: Mutation,
    pub data_as_path: Vec<Option<Asn>>,
}

fn lcs_len(a: &[Asn], b: &[Asn]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Congruence of the data-plane path with the detour's control-plane path.
pub fn validate_as_path(
    detour: &DetourRecord,
    data_path: &[Option<Asn>],
    anchor: Anchor,
) -> CongruenceVerdict {
    let anchor_asn = match anchor {
        Anchor::Destination => detour.destination_asn(),
        Anchor::Return => detour.detour_return_asn,
    };
    let known: Vec<Asn> = data_path.iter().flatten().copied().collect();
    let congruent = match known.iter().position(|a| *a == detour.detour_origin_asn) {
        Some(o) => known[o + 1..].contains(&anchor_asn),
        None => false,
    };
    let mutation = if !congruent {
        Mutation::Incongruent
    } else {
        let control = &detour.key.as_path;
        let l = lcs_len(control, &known);
        match (control.len() - l, known.len() - l) {
            (0, 0) => Mutation::Exact,
            (_, 0) => Mutation::Deletion,
            (0, _) => Mutation::Insertion,
            _ => Mutation::Mix,
        }
    };
    CongruenceVerdict {
        usable: true,
        congruent,
        mutation,
        data_as_path: data_path.to_vec(),
    }
}

/// Country of every responsive hop, in order.
pub fn hop_countries(tr: &TracerouteResult, db: &GeoDbStack) -> Vec<Option<CountryCode>> {
    tr.responsive().map(|(ip, _)| db.country(ip)).collect()
}

/// True when the hop countries go home, then to one of the detour's
/// destination countries, then home again.
pub fn validate_ip_hops(detour: &DetourRecord, countries: &[Option<CountryCode>]) -> bool {
    let home = detour.home_country;
    let mut stage = 0;
    for c in countries.iter().flatten() {
        stage = match stage {
            0 if *c == home => 1,
            1 if detour.detour_destination_countries.contains(*c) => 2,
            2 if *c == home => return true,
            s => s,
        };
    }
    false
}

/// True when some consecutive pair of responsive hops shows a jump of at
/// least `ratio` times and at least `floor_ms` in minimum RTT.
pub fn validate_rtts(tr: &TracerouteResult, ratio: f64, floor_ms: f64) -> bool {
    let mins: Vec<f64> = tr
        .responsive()
        .filter_map(|(_, h)| h.rtts.iter().copied().reduce(f64::min))
        .collect();
    rtt_jump(&mins, ratio, floor_ms)
}

pub fn rtt_jump(mins: &[f64], ratio: f64, floor_ms: f64) -> bool {
    mins.windows(2)
        .any(|w| w[1] >= ratio * w[0] && w[1] - w[0] >= floor_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub probe_id: String,
    pub key: DetourKey,
    pub congruence: CongruenceVerdict,
    pub country_wise: bool,
    pub rtt_wise: bool,
    /// Some hop geolocated to one of the detour's destination countries.
    pub detour_destination_matched: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub pairs: u64,
    pub usable: u64,
    pub congruent: u64,
    pub country_wise: u64,
    pub rtt_wise: u64,
    pub both: u64,
    pub mutations: BTreeMap<Mutation, u64>,
    pub unmatched_traceroutes: u64,
}

pub fn validate_pair(
    detour: &DetourRecord,
    tr: &TracerouteResult,
    mapper: &AsMapper,
    db: &GeoDbStack,
    opts: ValidateOptions,
) -> ValidationOutcome {
    let data_path = hops_to_as_path(tr, mapper);
    let usable = tr.responsive_count() >= MIN_RESPONSIVE_HOPS;
    let mut congruence = if usable {
        validate_as_path(detour, &data_path, opts.anchor)
    } else {
        CongruenceVerdict {
            usable: false,
            congruent: false,
            mutation: Mutation::Incongruent,
            data_as_path: data_path,
        }
    };
    congruence.usable = usable;
    let countries = hop_countries(tr, db);
    let checked = usable && congruence.congruent;
    ValidationOutcome {
        probe_id: tr.probe_id.clone(),
        key: detour.key.clone(),
        country_wise: checked && validate_ip_hops(detour, &countries),
        rtt_wise: checked && validate_rtts(tr, opts.rtt_ratio, opts.rtt_floor_ms),
        detour_destination_matched: countries
            .iter()
            .flatten()
            .any(|c| detour.detour_destination_countries.contains(*c)),
        congruence,
    }
}

/// Validates each pair and folds the counters. Unusable traceroutes are
/// left out of every count except `pairs`.
pub fn validate_all(
    pairs: &[(&DetourRecord, &TracerouteResult)],
    mapper: &AsMapper,
    db: &GeoDbStack,
    opts: ValidateOptions,
) -> (Vec<ValidationOutcome>, ValidationSummary) {
    let mut summary = ValidationSummary::default();
    let mut outcomes = Vec::with_capacity(pairs.len());
    for (d, tr) in pairs {
        let o = validate_pair(d, tr, mapper, db, opts);
        summary.pairs += 1;
        if o.congruence.usable {
            summary.usable += 1;
            *summary.mutations.entry(o.congruence.mutation).or_default() += 1;
            summary.congruent += o.congruence.congruent as u64;
            summary.country_wise += o.country_wise as u64;
            summary.rtt_wise += o.rtt_wise as u64;
            summary.both += (o.country_wise && o.rtt_wise) as u64;
        }
        outcomes.push(o);
    }
    (outcomes, summary)
}

/// Pairs each traceroute with the detour it probes: same source AS as the
/// detour's peer and a destination inside the detoured prefix. Among
/// several candidates the latest epoch wins, then the smallest key.
/// Returns the pairs and the number of unmatched traceroutes.
pub fn match_traceroutes<'a>(
    detours: &'a [DetourRecord],
    traceroutes: &'a [TracerouteResult],
) -> (Vec<(&'a DetourRecord, &'a TracerouteResult)>, u64) {
    let mut by_peer: BTreeMap<Asn, Vec<&DetourRecord>> = BTreeMap::new();
    for d in detours {
        by_peer.entry(d.peer_asn).or_default().push(d);
    }
    let mut pairs = Vec::new();
    let mut unmatched = 0;
    for tr in traceroutes {
        let best = by_peer
            .get(&tr.src_asn)
            .into_iter()
            .flatten()
            .filter(|d| d.key.prefix.contains(&tr.dst_ip))
            .max_by(|a, b| a.epoch.cmp(&b.epoch).then_with(|| b.key.cmp(&a.key)));
        match best {
            Some(d) => pairs.push((*d, tr)),
            None => unmatched += 1,
        }
    }
    (pairs, unmatched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{IpCountryDb, IpRange};
    use crate::types::{countries, parse_country};
    use proptest::prelude::*;

    fn detour(path: &[u32], origin: u32, dest: &[u32], ret: u32, dest_c: &[&str]) -> DetourRecord {
        DetourRecord {
            key: DetourKey {
                peer_ip: "192.0.2.1".parse().unwrap(),
                prefix: "203.0.113.0/24".parse().unwrap(),
                as_path: path.iter().map(|a| Asn(*a)).collect(),
            },
            peer_asn: Asn(path[0]),
            epoch: 0,
            home_country: CountryCode::must("US"),
            detour_origin_asn: Asn(origin),
            detour_destination_asns: dest.iter().map(|a| Asn(*a)).collect(),
            detour_destination_countries: countries(dest_c),
            detour_return_asn: Asn(ret),
            prefix_origin_asn: Asn(*path.last().unwrap()),
            foreign_hop_count: dest.len(),
            repeat_departure: false,
        }
    }

    fn known(p: &[u32]) -> Vec<Option<Asn>> {
        p.iter().map(|a| Some(Asn(*a))).collect()
    }

    // A=1 B=2 C=3 D=4 E=5 X=9
    #[test]
    fn mutation_classes() {
        let d = detour(&[1, 2, 3, 4, 5], 2, &[3], 4, &["GB"]);
        let v = validate_as_path(&d, &known(&[1, 9, 2, 3, 5]), Anchor::Destination);
        assert!(v.congruent);
        assert_eq!(v.mutation, Mutation::Mix);

        let v = validate_as_path(&d, &known(&[1, 2, 3, 4, 5]), Anchor::Destination);
        assert_eq!(v.mutation, Mutation::Exact);
        let v = validate_as_path(&d, &known(&[1, 2, 3, 5]), Anchor::Destination);
        assert_eq!(v.mutation, Mutation::Deletion);
        let v = validate_as_path(&d, &known(&[1, 2, 9, 3, 4, 5]), Anchor::Destination);
        assert_eq!(v.mutation, Mutation::Insertion);

        let v = validate_as_path(&d, &known(&[1, 3, 4, 5]), Anchor::Destination);
        assert!(!v.congruent);
        assert_eq!(v.mutation, Mutation::Incongruent);

        // return-AS anchor: D is missing from the mix example
        let v = validate_as_path(&d, &known(&[1, 9, 2, 3, 5]), Anchor::Return);
        assert!(!v.congruent);
    }

    #[test]
    fn gaps_do_not_break_congruence() {
        let d = detour(&[1, 2, 3, 4], 2, &[3], 4, &["GB"]);
        let path = vec![Some(Asn(1)), Some(Asn(2)), None, Some(Asn(3)), Some(Asn(4))];
        let v = validate_as_path(&d, &path, Anchor::Destination);
        assert_eq!(v.mutation, Mutation::Exact);
    }

    fn cc(s: &[&str]) -> Vec<Option<CountryCode>> {
        s.iter()
            .map(|c| {
                if *c == "?" {
                    None
                } else {
                    Some(CountryCode::must(c))
                }
            })
            .collect()
    }

    #[test]
    fn country_sequence() {
        let d = detour(&[1, 2, 3], 1, &[2], 3, &["GB", "DE"]);
        assert!(validate_ip_hops(&d, &cc(&["US", "US", "GB", "US"])));
        assert!(!validate_ip_hops(&d, &cc(&["US", "US", "IT", "US"])));
        assert!(!validate_ip_hops(&d, &cc(&["US", "US", "?", "?"])));
        assert!(!validate_ip_hops(&d, &cc(&["US", "GB", "?"])));
    }

    #[test]
    fn rtt_rules() {
        assert!(rtt_jump(&[1.2, 1.5, 18.0, 19.1], 10.0, 5.0));
        assert!(!rtt_jump(&[0.1, 0.9], 10.0, 5.0));
        assert!(!rtt_jump(&[0.2, 2.1], 10.0, 5.0));
        assert!(!rtt_jump(&[], 10.0, 5.0));
    }

    fn tr(hops: &[(Option<&str>, &[f64])]) -> TracerouteResult {
        TracerouteResult {
            probe_id: "p".into(),
            src_asn: Asn(1),
            src_country: CountryCode::must("US"),
            dst_ip: "203.0.113.9".parse().unwrap(),
            hops: hops
                .iter()
                .enumerate()
                .map(|(i, (ip, r))| TracerouteHop {
                    ttl: i as u32 + 1,
                    ip: ip.map(|s| s.parse().unwrap()),
                    rtts: r.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn as_path_collapses_and_keeps_gaps() {
        let mut mapper = AsMapper::default();
        mapper
            .table
            .insert("10.1.0.0/16".parse().unwrap(), Asn(100));
        mapper
            .table
            .insert("10.2.0.0/22".parse().unwrap(), Asn(200));
        let mut ds = IpAsMap::new();
        ds.insert("10.2.0.1".parse().unwrap(), Asn(300));
        mapper.datasets.push(ds);
        let t = tr(&[
            (Some("10.1.0.1"), &[1.0]),
            (Some("10.1.0.2"), &[1.0]),
            (None, &[]),
            (Some("10.2.0.1"), &[1.0]),
            (Some("10.2.0.2"), &[1.0]),
            (Some("11.0.0.1"), &[1.0]),
        ]);
        assert_eq!(
            hops_to_as_path(&t, &mapper),
            vec![Some(Asn(100)), Some(Asn(300)), Some(Asn(200)), None]
        );
        let timeouts = tr(&[(None, &[]), (None, &[])]);
        assert!(hops_to_as_path(&timeouts, &mapper).is_empty());
    }

    #[test]
    fn short_traceroutes_are_unusable() {
        let d = detour(&[1, 2, 3], 1, &[2], 3, &["GB"]);
        let t = tr(&[
            (Some("10.1.0.1"), &[1.0]),
            (None, &[]),
            (Some("10.1.0.2"), &[50.0]),
        ]);
        let (_, s) = validate_all(
            &[(&d, &t)],
            &AsMapper::default(),
            &GeoDbStack::default(),
            ValidateOptions::default(),
        );
        assert_eq!((s.pairs, s.usable, s.congruent), (1, 0, 0));
        let (_, s) = validate_all(
            &[],
            &AsMapper::default(),
            &GeoDbStack::default(),
            ValidateOptions::default(),
        );
        assert_eq!(s, ValidationSummary::default());
    }

    #[test]
    fn pair_matching_prefers_latest_epoch() {
        let mut a = detour(&[1, 2, 3], 1, &[2], 3, &["GB"]);
        let mut b = a.clone();
        a.epoch = 3;
        b.epoch = 7;
        b.key.as_path = vec![Asn(1), Asn(5), Asn(3)];
        let mut other = tr(&[]);
        other.src_asn = Asn(99);
        let trs = vec![tr(&[]), other];
        let detours = vec![a, b];
        let (pairs, unmatched) = match_traceroutes(&detours, &trs);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.epoch, 7);
        assert_eq!(unmatched, 1);
    }

    #[test]
    fn full_pair_with_geolocation() {
        let range = |a: &str, b: &str, c: &str| IpRange {
            start: u32::from(a.parse::<Ipv4Addr>().unwrap()),
            end: u32::from(b.parse::<Ipv4Addr>().unwrap()),
            answer: parse_country(c).unwrap(),
        };
        let db = GeoDbStack::new(
            IpCountryDb::new(vec![
                range("10.1.0.0", "10.1.255.255", "US"),
                range("10.2.0.0", "10.2.255.255", "GB"),
                range("10.3.0.0", "10.3.255.255", "US"),
            ])
            .unwrap(),
            None,
        );
        let mut mapper = AsMapper::default();
        mapper.table.insert("10.1.0.0/16".parse().unwrap(), Asn(1));
        mapper.table.insert("10.2.0.0/16".parse().unwrap(), Asn(2));
        mapper.table.insert("10.3.0.0/16".parse().unwrap(), Asn(3));
        let d = detour(&[1, 2, 3], 1, &[2], 3, &["GB"]);
        let t = tr(&[
            (Some("10.1.0.1"), &[1.0, 0.8]),
            (Some("10.2.0.1"), &[40.0, 42.0]),
            (Some("10.3.0.1"), &[80.0]),
        ]);
        let o = validate_pair(&d, &t, &mapper, &db, ValidateOptions::default());
        assert_eq!(o.congruence.mutation, Mutation::Exact);
        assert!(o.country_wise && o.rtt_wise && o.detour_destination_matched);
    }

    proptest! {
        #[test]
        fn rtt_min_is_order_free(mut hops in proptest::collection::vec(proptest::collection::vec(0.1f64..300.0, 1..4), 0..8)) {
            let ips: Vec<String> = (0..hops.len()).map(|i| format!("10.0.0.{}", i + 1)).collect();
            let build = |hs: &Vec<Vec<f64>>| tr(&ips.iter().zip(hs).map(|(ip, r)| (Some(ip.as_str()), r.as_slice())).collect::<Vec<_>>());
            let before = validate_rtts(&build(&hops), 10.0, 5.0);
            for h in hops.iter_mut() {
                h.reverse();
            }
            prop_assert_eq!(before, validate_rtts(&build(&hops), 10.0, 5.0));
        }

        #[test]
        fn raising_the_post_jump_rtt_keeps_the_jump(mins in proptest::collection::vec(0.1f64..300.0, 2..10), bump in 0.0f64..500.0) {
            if let Some(k) = mins.windows(2).position(|w| w[1] >= 10.0 * w[0] && w[1] - w[0] >= 5.0) {
                let mut raised = mins.clone();
                raised[k + 1] += bump;
                prop_assert!(rtt_jump(&raised, 10.0, 5.0));
            }
        }

        #[test]
        fn reversal_flips_congruence((len, o, a) in (4usize..8).prop_flat_map(|n| (Just(n), 0..n - 1)).prop_flat_map(|(n, o)| (Just(n), Just(o), o + 1..n))) {
            let path: Vec<u32> = (1..=len as u32).collect();
            let d = detour(&path, path[o], &path[o + 1..a + 1], path[(a + 1).min(len - 1)], &["GB"]);
            let fwd = known(&path);
            let mut rev = fwd.clone();
            rev.reverse();
            let f = validate_as_path(&d, &fwd, Anchor::Destination).congruent;
            let r = validate_as_path(&d, &rev, Anchor::Destination).congruent;
            prop_assert!(f != r);
        }
    }
}
