//! Synthetic world construction and detour planting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{IpAddr, Ipv4Addr};

use ipnet::Ipv4Net;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{oracle_detect, OracleHop};
use super::FixtureError;
use crate::detect::{PathClass, Relation};
use crate::types::{Asn, CountryCode, CountrySet};
use crate::validate::{TracerouteHop, TracerouteResult};

pub const RNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

const COUNTRY_POOL: [&str; 12] = [
    "US", "BR", "DE", "JP", "IN", "GB", "FR", "ZA", "AU", "CA", "SG", "NL",
];

/// What a planted traceroute should show.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    /// Congruent, detour visible by country and by RTT.
    Full,
    /// Congruent, by country only.
    NoRtt,
    /// Congruent, by RTT only: the foreign hop geolocates elsewhere.
    NoCountry,
    /// Origin AS missing from the data path.
    Incongruent,
    /// Two responsive hops.
    Short,
    /// Like `Full` with an extra AS before the origin.
    Inserted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub window_start: u64,
    pub epochs: u32,
    pub countries: usize,
    /// Countries hosting peers; the rest only provide foreign transit.
    pub home_countries: usize,
    pub peers: usize,
    /// Peer ASes with two peers each, counted within `peers`.
    pub shared_peer_ases: usize,
    pub collectors: usize,
    pub transits_per_country: usize,
    pub stubs_per_country: usize,
    pub prefixes_per_stub: usize,
    pub persistent: usize,
    pub transient: usize,
    pub flash: usize,
    /// Detours seen by both peers of a shared peer AS.
    pub shared: usize,
    /// Detours the peering filter should remove.
    pub filtered: usize,
    pub noise_per_peer: usize,
    pub superseded_snapshot: bool,
    pub hijack: bool,
    pub traceroutes: Vec<TraceKind>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 42,
            window_start: 1_451_606_400,
            epochs: 93,
            countries: 6,
            home_countries: 3,
            peers: 6,
            shared_peer_ases: 1,
            collectors: 2,
            transits_per_country: 3,
            stubs_per_country: 4,
            prefixes_per_stub: 6,
            persistent: 18,
            transient: 16,
            flash: 10,
            shared: 4,
            filtered: 6,
            noise_per_peer: 5,
            superseded_snapshot: true,
            hijack: true,
            traceroutes: vec![
                TraceKind::Full,
                TraceKind::Full,
                TraceKind::NoRtt,
                TraceKind::NoCountry,
                TraceKind::Incongruent,
                TraceKind::Short,
                TraceKind::Inserted,
            ],
        }
    }
}

impl Scenario {
    /// A varied scenario drawn from `seed`, always with at least five
    /// peers and fifty planted detour keys.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce7_a710);
        let home = rng.random_range(2..=4);
        let shared_ases = rng.random_range(1..=2);
        let mut sc = Scenario {
            seed,
            countries: home + rng.random_range(2..=4),
            home_countries: home,
            peers: rng.random_range(5..=8).max(home + shared_ases),
            shared_peer_ases: shared_ases,
            collectors: rng.random_range(1..=3),
            transits_per_country: rng.random_range(3..=4),
            stubs_per_country: rng.random_range(4..=6),
            prefixes_per_stub: rng.random_range(4..=7),
            persistent: rng.random_range(18..=24),
            transient: rng.random_range(16..=22),
            flash: rng.random_range(10..=14),
            shared: rng.random_range(3..=5),
            filtered: rng.random_range(3..=8),
            noise_per_peer: rng.random_range(2..=6),
            superseded_snapshot: rng.random_bool(0.7),
            hijack: true,
            ..Scenario::default()
        };
        // one peer may receive every plant; its country pool must cover them
        let plants = sc.persistent + sc.transient + sc.flash + sc.shared + sc.filtered;
        sc.prefixes_per_stub = sc
            .prefixes_per_stub
            .max(plants.div_ceil(sc.stubs_per_country));
        sc
    }

    /// Planted keys that survive the peering filter.
    pub fn expected_keys(&self) -> usize {
        self.persistent + self.transient + self.flash + 2 * self.shared
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AsRole {
    Peer,
    Transit,
    PeeringTransit,
    Stub,
    MultiCountry,
    Dark,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AsInfo {
    pub asn: Asn,
    pub role: AsRole,
    pub country: Option<CountryCode>,
    /// Countries the geolocation build should arrive at.
    pub truth: CountrySet,
    pub ambiguous_only: bool,
    /// Router /24 for ASes located through infrastructure evidence.
    pub infra: Option<Ipv4Net>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerSpec {
    pub ip: IpAddr,
    pub asn: Asn,
    pub country: CountryCode,
    pub collector: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixSpec {
    pub prefix: Ipv4Net,
    pub owner: Asn,
    /// `None` for a prefix that only geolocates to a pseudo-code.
    pub country: Option<CountryCode>,
    pub in_primary_db: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantClass {
    Persistent,
    Transient,
    Flash,
    Shared,
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantShape {
    Basic,
    TwoForeign,
    OriginPeer,
    MultiOrigin,
    MultiReturn,
    UnknownAfterReturn,
    RepeatDeparture,
    ReturnToOwner,
    FilteredP2c,
    FilteredPeerP2p,
    FilteredViaCustomer,
}

const KEPT_SHAPES: [PlantShape; 8] = [
    PlantShape::Basic,
    PlantShape::TwoForeign,
    PlantShape::OriginPeer,
    PlantShape::MultiOrigin,
    PlantShape::MultiReturn,
    PlantShape::UnknownAfterReturn,
    PlantShape::RepeatDeparture,
    PlantShape::ReturnToOwner,
];

const FILTERED_SHAPES: [PlantShape; 3] = [
    PlantShape::FilteredP2c,
    PlantShape::FilteredPeerP2p,
    PlantShape::FilteredViaCustomer,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plant {
    pub class: PlantClass,
    pub shape: PlantShape,
    /// Indices into the plan's peers; two for shared plants.
    pub peers: Vec<usize>,
    pub prefix: Ipv4Net,
    pub path: Vec<Asn>,
    pub origin: usize,
    pub ret: usize,
    pub epochs: BTreeSet<u32>,
    pub home: CountryCode,
    pub expect_filtered: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    PossibleOnly,
    UnknownHop,
    AmbiguousHop,
    AsSetHop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathOverride {
    pub peer: usize,
    pub prefix: Ipv4Net,
    pub path: Vec<Asn>,
    /// Epochs the override applies to; empty means all.
    pub epochs: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfraRow {
    pub ip: Ipv4Addr,
    pub source: String,
    pub country: String,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedTrace {
    pub plant: usize,
    pub kind: TraceKind,
    pub result: TracerouteResult,
}

/// Everything needed to write a bundle, before any file exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub scenario: Scenario,
    pub countries: Vec<CountryCode>,
    pub ases: BTreeMap<Asn, AsInfo>,
    pub peers: Vec<PeerSpec>,
    pub prefixes: Vec<PrefixSpec>,
    pub transits: BTreeMap<CountryCode, Vec<Asn>>,
    pub plants: Vec<Plant>,
    pub noise: Vec<(NoiseKind, PathOverride)>,
    pub hijack: Option<PathOverride>,
    /// An earlier snapshot in the same epoch, carrying a route that the
    /// later snapshot replaces: (collector, epoch, override).
    pub superseded: Option<(usize, u32, PathOverride)>,
    pub relations: Vec<(Asn, Asn, Relation)>,
    pub infra: Vec<InfraRow>,
    pub ip_to_as: Vec<(Ipv4Addr, Asn)>,
    pub ixp: Vec<(Asn, String, String)>,
    pub primary_db: Vec<(Ipv4Addr, Ipv4Addr, String)>,
    pub fallback_db: Vec<(Ipv4Addr, Ipv4Addr, String)>,
    pub traces: Vec<PlannedTrace>,
}

struct Alloc {
    next_asn: u32,
    next_block: u32,
}

impl Alloc {
    fn asn(&mut self) -> Asn {
        let a = Asn(self.next_asn);
        self.next_asn += 1;
        a
    }

    fn block(&mut self) -> Ipv4Net {
        let n = Ipv4Net::new(Ipv4Addr::from(self.next_block), 24).unwrap();
        self.next_block += 256;
        n
    }
}

fn host(net: Ipv4Net, last: u8) -> Ipv4Addr {
    let o = net.network().octets();
    Ipv4Addr::new(o[0], o[1], o[2], last)
}

fn span(net: Ipv4Net, lo: u8, hi: u8) -> (Ipv4Addr, Ipv4Addr) {
    (host(net, lo), host(net, hi))
}

impl Plan {
    pub fn as_info(&self, a: Asn) -> Option<&AsInfo> {
        self.ases.get(&a)
    }

    pub fn oracle_hops(&self, path: &[Asn]) -> Vec<OracleHop> {
        path.iter()
            .map(|a| match self.ases.get(a) {
                Some(i) => OracleHop {
                    countries: i.truth.clone(),
                    ambiguous_only: i.ambiguous_only,
                },
                None => OracleHop::known(CountrySet::new()),
            })
            .collect()
    }

    fn transit(&self, c: CountryCode, i: usize) -> Asn {
        let t = &self.transits[&c];
        t[i % t.len()]
    }

    fn country_of(&self, a: Asn) -> Option<CountryCode> {
        self.ases.get(&a).and_then(|i| i.country)
    }

    /// The route a peer normally uses towards a prefix.
    pub fn baseline_path(&self, peer: usize, prefix: &PrefixSpec) -> Vec<Asn> {
        let p = &self.peers[peer];
        if prefix.owner == p.asn {
            return vec![p.asn];
        }
        let pick = (u32::from(prefix.prefix.network()) >> 8) as usize;
        let near = self.transit(p.country, pick);
        let far_country = self.country_of(prefix.owner).unwrap_or(p.country);
        if far_country == p.country {
            vec![p.asn, near, prefix.owner]
        } else {
            vec![
                p.asn,
                near,
                self.transit(far_country, pick + 1),
                prefix.owner,
            ]
        }
    }

    /// Checks every plant against the oracle and every other route for
    /// the absence of a definite detour.
    pub fn check(&self) -> Result<(), FixtureError> {
        for (i, pl) in self.plants.iter().enumerate() {
            let unrealizable = |reason: String| FixtureError::Unrealizable { plant: i, reason };
            let hops = self.oracle_hops(&pl.path);
            match oracle_detect(&hops) {
                PathClass::Definite(s) if s.origin == pl.origin && s.ret == pl.ret => {}
                PathClass::Definite(s) => {
                    return Err(unrealizable(format!(
                        "path {:?} detours at {}..{} instead of {}..{}",
                        pl.path, s.origin, s.ret, pl.origin, pl.ret
                    )))
                }
                other => {
                    return Err(unrealizable(format!(
                        "path {:?} classifies as {other:?}",
                        pl.path
                    )))
                }
            }
            for &p in &pl.peers {
                if self.peers[p].asn != pl.path[0] {
                    return Err(unrealizable(format!("peer {p} is not the first hop")));
                }
            }
        }
        for (kind, o) in &self.noise {
            if let PathClass::Definite(_) = oracle_detect(&self.oracle_hops(&o.path)) {
                return Err(FixtureError::Internal(format!(
                    "{kind:?} noise path {:?} is a detour",
                    o.path
                )));
            }
        }
        for (pi, _) in self.peers.iter().enumerate() {
            for pre in &self.prefixes {
                let path = self.baseline_path(pi, pre);
                if let PathClass::Definite(_) = oracle_detect(&self.oracle_hops(&path)) {
                    return Err(FixtureError::Internal(format!(
                        "baseline path {path:?} is a detour"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn epochs_persistent(rng: &mut ChaCha8Rng, e: u32) -> BTreeSet<u32> {
    let len = rng.random_range(10..=e);
    let start = rng.random_range(0..=e - len);
    let mut out: BTreeSet<u32> = (start..start + len).collect();
    if rng.random_bool(0.4) && start >= 3 {
        let extra = rng.random_range(1..=(start - 1).min(5));
        let at = rng.random_range(0..=start - 1 - extra);
        out.extend(at..at + extra);
    }
    out
}

fn epochs_transient(rng: &mut ChaCha8Rng, e: u32) -> BTreeSet<u32> {
    let mut out = BTreeSet::new();
    let mut cursor = rng.random_range(0..=e.saturating_sub(2).min(e / 3));
    let runs = rng.random_range(1..=3);
    for r in 0..runs {
        let len = if r == 0 {
            rng.random_range(2..=9)
        } else {
            rng.random_range(1..=9)
        };
        if cursor + len > e {
            break;
        }
        out.extend(cursor..cursor + len);
        cursor += len + rng.random_range(1..=15);
    }
    if out.len() < 2 {
        out = (0..2.min(e)).collect();
    }
    out
}

fn epochs_single(rng: &mut ChaCha8Rng, e: u32) -> BTreeSet<u32> {
    BTreeSet::from([rng.random_range(0..e)])
}

#[derive(Default)]
struct Rows {
    infra: Vec<InfraRow>,
    ip_to_as: Vec<(Ipv4Addr, Asn)>,
    primary_db: Vec<(Ipv4Addr, Ipv4Addr, String)>,
}

fn infra_as(
    alloc: &mut Alloc,
    ases: &mut BTreeMap<Asn, AsInfo>,
    rows: &mut Rows,
    rng: &mut ChaCha8Rng,
    countries: &[CountryCode],
    ci: usize,
    role: AsRole,
) -> Asn {
    let n = countries.len();
    let c = countries[ci];
    let asn = alloc.asn();
    let block = alloc.block();
    let (a, b) = span(block, 0, 199);
    rows.primary_db.push((a, b, c.to_string()));
    let (a, b) = span(block, 200, 227);
    rows.primary_db
        .push((a, b, countries[(ci + 1) % n].to_string()));
    let (a, b) = span(block, 228, 255);
    rows.primary_db
        .push((a, b, countries[(ci + 2) % n].to_string()));
    let router = host(block, 1);
    rows.infra.push(InfraRow {
        ip: router,
        source: "iplane".into(),
        country: c.to_string(),
        confidence: None,
    });
    if rng.random_bool(0.5) {
        rows.infra.push(InfraRow {
            ip: router,
            source: "crowd".into(),
            country: c.to_string(),
            confidence: Some(0.9 + rng.random_range(0..=9) as f64 / 100.0),
        });
    }
    if rng.random_bool(0.3) {
        rows.infra.push(InfraRow {
            ip: router,
            source: "crowd".into(),
            country: countries[(ci + 3) % n].to_string(),
            confidence: Some(rng.random_range(10..=89) as f64 / 100.0),
        });
    }
    for last in [1, 200, 228] {
        rows.ip_to_as.push((host(block, last), asn));
    }
    ases.insert(
        asn,
        AsInfo {
            asn,
            role,
            country: Some(c),
            truth: CountrySet::single(c),
            ambiguous_only: false,
            infra: Some(block),
        },
    );
    asn
}

/// Builds a plan from a scenario. Deterministic in the scenario.
pub fn build_plan(sc: &Scenario) -> Result<Plan, FixtureError> {
    let bad = |m: &str| Err(FixtureError::Scenario(m.to_string()));
    if sc.countries > COUNTRY_POOL.len() || sc.countries < 3 {
        return bad("countries must be between 3 and 12");
    }
    if sc.home_countries == 0 || sc.home_countries >= sc.countries {
        return bad("need at least one home country and one foreign-only country");
    }
    if sc.peers < sc.home_countries + sc.shared_peer_ases {
        return bad("too few peers for the home countries and shared peer ASes");
    }
    if sc.transits_per_country < 3 {
        return bad("at least three transits per country are needed");
    }
    if sc.collectors == 0 || sc.epochs == 0 {
        return bad("need at least one collector and one epoch");
    }
    if sc.persistent > 0 && sc.epochs < 10 {
        return bad("persistent detours need at least 10 epochs");
    }
    if sc.transient + sc.shared > 0 && sc.epochs < 2 {
        return bad("transient detours need at least 2 epochs");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut alloc = Alloc {
        next_asn: 1000,
        next_block: u32::from(Ipv4Addr::new(1, 0, 0, 0)),
    };
    let countries: Vec<CountryCode> = COUNTRY_POOL[..sc.countries]
        .iter()
        .map(|c| CountryCode::must(c))
        .collect();
    let home: Vec<CountryCode> = countries[..sc.home_countries].to_vec();

    let mut ases: BTreeMap<Asn, AsInfo> = BTreeMap::new();
    let mut prefixes: Vec<PrefixSpec> = Vec::new();
    let mut transits: BTreeMap<CountryCode, Vec<Asn>> = BTreeMap::new();
    let mut peering: BTreeMap<CountryCode, Vec<Asn>> = BTreeMap::new();
    let mut multi: BTreeMap<CountryCode, Asn> = BTreeMap::new();
    let mut stubs: BTreeMap<CountryCode, Vec<Asn>> = BTreeMap::new();
    let mut ixp: Vec<(Asn, String, String)> = Vec::new();
    let mut fallback_db: Vec<(Ipv4Addr, Ipv4Addr, String)> = Vec::new();

    let n = countries.len();
    let mut rows = Rows::default();
    for (ci, c) in countries.iter().enumerate() {
        for _ in 0..sc.transits_per_country {
            let t = infra_as(
                &mut alloc,
                &mut ases,
                &mut rows,
                &mut rng,
                &countries,
                ci,
                AsRole::Transit,
            );
            transits.entry(*c).or_default().push(t);
        }
        if ci < sc.home_countries {
            for _ in 0..4 {
                let t = infra_as(
                    &mut alloc,
                    &mut ases,
                    &mut rows,
                    &mut rng,
                    &countries,
                    ci,
                    AsRole::PeeringTransit,
                );
                peering.entry(*c).or_default().push(t);
            }
            let m = infra_as(
                &mut alloc,
                &mut ases,
                &mut rows,
                &mut rng,
                &countries,
                ci,
                AsRole::MultiCountry,
            );
            let other = countries[(ci + 1) % n];
            ixp.push((
                m,
                format!("ix-{}", other.as_str().to_lowercase()),
                other.to_string(),
            ));
            ases.get_mut(&m).unwrap().truth.insert(other);
            multi.insert(*c, m);
        }
        for _ in 0..sc.stubs_per_country {
            let s = alloc.asn();
            ases.insert(
                s,
                AsInfo {
                    asn: s,
                    role: AsRole::Stub,
                    country: Some(*c),
                    truth: CountrySet::single(*c),
                    ambiguous_only: false,
                    infra: None,
                },
            );
            stubs.entry(*c).or_default().push(s);
            for _ in 0..sc.prefixes_per_stub {
                let block = alloc.block();
                let in_primary = !rng.random_bool(0.12);
                let (a, b) = span(block, 0, 255);
                if in_primary {
                    rows.primary_db.push((a, b, c.to_string()));
                    if rng.random_bool(0.05) {
                        // must be ignored: primary already answers
                        fallback_db.push((a, b, countries[(ci + 1) % n].to_string()));
                    }
                } else {
                    fallback_db.push((a, b, c.to_string()));
                }
                prefixes.push(PrefixSpec {
                    prefix: block,
                    owner: s,
                    country: Some(*c),
                    in_primary_db: in_primary,
                });
            }
        }
    }

    let dark = alloc.asn();
    ases.insert(
        dark,
        AsInfo {
            asn: dark,
            role: AsRole::Dark,
            country: None,
            truth: CountrySet::new(),
            ambiguous_only: false,
            infra: None,
        },
    );
    let ambiguous = alloc.asn();
    {
        let block = alloc.block();
        let (a, b) = span(block, 0, 255);
        rows.primary_db.push((a, b, "EU".into()));
        prefixes.push(PrefixSpec {
            prefix: block,
            owner: ambiguous,
            country: None,
            in_primary_db: true,
        });
        ases.insert(
            ambiguous,
            AsInfo {
                asn: ambiguous,
                role: AsRole::Ambiguous,
                country: None,
                truth: CountrySet::new(),
                ambiguous_only: true,
                infra: None,
            },
        );
        ixp.push((ambiguous, "ix-europe".into(), "EU".into()));
    }

    // Peers: one AS per distinct peer group, shared groups get two peers.
    let groups = sc.peers - sc.shared_peer_ases;
    let mut peers: Vec<PeerSpec> = Vec::new();
    let mut peer_groups: Vec<Vec<usize>> = Vec::new();
    for g in 0..groups {
        let c = home[g % home.len()];
        let asn = alloc.asn();
        let block = alloc.block();
        let (a, b) = span(block, 0, 255);
        rows.primary_db.push((a, b, c.to_string()));
        prefixes.push(PrefixSpec {
            prefix: block,
            owner: asn,
            country: Some(c),
            in_primary_db: true,
        });
        ases.insert(
            asn,
            AsInfo {
                asn,
                role: AsRole::Peer,
                country: Some(c),
                truth: CountrySet::single(c),
                ambiguous_only: false,
                infra: None,
            },
        );
        let members = if g < sc.shared_peer_ases { 2 } else { 1 };
        let mut idx = Vec::new();
        for m in 0..members {
            idx.push(peers.len());
            peers.push(PeerSpec {
                ip: IpAddr::V4(host(block, 1 + m as u8)),
                asn,
                country: c,
                collector: peers.len() % sc.collectors,
            });
        }
        peer_groups.push(idx);
    }
    rows.primary_db.sort();
    fallback_db.sort();

    let mut plan = Plan {
        scenario: sc.clone(),
        countries: countries.clone(),
        ases,
        peers,
        prefixes,
        transits,
        plants: Vec::new(),
        noise: Vec::new(),
        hijack: None,
        superseded: None,
        relations: Vec::new(),
        infra: rows.infra,
        ip_to_as: rows.ip_to_as,
        ixp,
        primary_db: rows.primary_db,
        fallback_db,
        traces: Vec::new(),
    };

    // (peer AS, prefix) pairs already carrying a special route
    let mut taken: BTreeSet<(Asn, Ipv4Net)> = BTreeSet::new();
    let home_prefixes: BTreeMap<CountryCode, Vec<(Ipv4Net, Asn)>> = {
        let mut m: BTreeMap<CountryCode, Vec<(Ipv4Net, Asn)>> = BTreeMap::new();
        for p in &plan.prefixes {
            if let Some(c) = p.country {
                if plan.ases[&p.owner].role == AsRole::Stub {
                    m.entry(c).or_default().push((p.prefix, p.owner));
                }
            }
        }
        m
    };
    let mut pick_prefix = |rng: &mut ChaCha8Rng, peer_asn: Asn, c: CountryCode| {
        let pool = &home_prefixes[&c];
        for _ in 0..256 {
            let (p, o) = *pool.choose(rng).expect("every country has stubs");
            if taken.insert((peer_asn, p)) {
                return Some((p, o));
            }
        }
        pool.iter()
            .copied()
            .find(|(p, _)| taken.insert((peer_asn, *p)))
    };

    let hijacker = plan.transits[&countries[sc.home_countries]][0];
    // only meaningful when the ownership threshold can exclude it
    let hijack_on = sc.hijack && sc.epochs as u64 * 8 >= 15 * 24;

    let mut classes: Vec<PlantClass> = Vec::new();
    classes.extend(std::iter::repeat_n(PlantClass::Persistent, sc.persistent));
    classes.extend(std::iter::repeat_n(PlantClass::Transient, sc.transient));
    classes.extend(std::iter::repeat_n(PlantClass::Flash, sc.flash));
    classes.extend(std::iter::repeat_n(PlantClass::Shared, sc.shared));
    classes.extend(std::iter::repeat_n(PlantClass::Filtered, sc.filtered));

    let mut p2p_home: BTreeSet<(Asn, Asn)> = BTreeSet::new();
    let mut kept_count = 0usize;
    for (pi, class) in classes.iter().enumerate() {
        let group = match class {
            PlantClass::Shared => {
                let shared: Vec<&Vec<usize>> =
                    peer_groups.iter().filter(|g| g.len() == 2).collect();
                shared.choose(&mut rng).map(|g| (*g).clone())
            }
            _ => {
                let g = peer_groups.choose(&mut rng).unwrap();
                Some(vec![*g.choose(&mut rng).unwrap()])
            }
        };
        let Some(group) = group else {
            return bad("shared plants need a shared peer AS");
        };
        let peer = &plan.peers[group[0]];
        let (a, peer_asn) = (peer.country, peer.asn);
        let Some((prefix, owner)) = pick_prefix(&mut rng, peer_asn, a) else {
            return Err(FixtureError::Scenario(format!(
                "ran out of prefixes for plant {pi} in {a}"
            )));
        };

        let shape = if *class == PlantClass::Filtered {
            *FILTERED_SHAPES.choose(&mut rng).unwrap()
        } else if kept_count < sc.traceroutes.len() {
            PlantShape::Basic
        } else {
            *KEPT_SHAPES.choose(&mut rng).unwrap()
        };
        if *class != PlantClass::Filtered {
            kept_count += 1;
        }

        let home_t = &plan.transits[&a];
        let mut ts: Vec<Asn> = home_t.clone();
        for i in (1..ts.len()).rev() {
            let j = rng.random_range(0..=i);
            ts.swap(i, j);
        }
        let foreign: Vec<Asn> = plan
            .transits
            .iter()
            .filter(|(c, _)| **c != a)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        let f1 = if pi == 0 && hijack_on {
            hijacker
        } else {
            *foreign.choose(&mut rng).unwrap()
        };
        let f2 = loop {
            let f = *foreign.choose(&mut rng).unwrap();
            if f != f1 {
                break f;
            }
        };
        let m = multi[&a];
        let pp = &peering[&a];
        let (path, origin, ret): (Vec<Asn>, usize, usize) = match shape {
            PlantShape::Basic => (vec![peer_asn, ts[0], f1, ts[1], owner], 1, 3),
            PlantShape::TwoForeign => (vec![peer_asn, ts[0], f1, f2, ts[1], owner], 1, 4),
            PlantShape::OriginPeer => (vec![peer_asn, f1, ts[1], owner], 0, 2),
            PlantShape::MultiOrigin => (vec![peer_asn, m, f1, ts[1], owner], 1, 3),
            PlantShape::MultiReturn => (vec![peer_asn, ts[0], f1, m, owner], 1, 3),
            PlantShape::UnknownAfterReturn => (vec![peer_asn, ts[0], f1, ts[1], dark, owner], 1, 3),
            PlantShape::RepeatDeparture => {
                (vec![peer_asn, ts[0], f1, ts[1], f2, ts[2], owner], 1, 3)
            }
            PlantShape::ReturnToOwner => (vec![peer_asn, ts[0], f1, owner], 1, 3),
            PlantShape::FilteredP2c => (vec![peer_asn, pp[0], f1, pp[1], owner], 1, 3),
            PlantShape::FilteredPeerP2p => (vec![peer_asn, f1, pp[1], owner], 0, 2),
            PlantShape::FilteredViaCustomer => (vec![peer_asn, pp[2], f1, pp[3], owner], 1, 3),
        };
        match shape {
            PlantShape::FilteredP2c => plan.relations.push((pp[0], pp[1], Relation::P2c)),
            PlantShape::FilteredPeerP2p => plan.relations.push((peer_asn, pp[1], Relation::P2p)),
            PlantShape::FilteredViaCustomer => {
                plan.relations.push((pp[2], pp[3], Relation::P2p));
                plan.relations.push((peer_asn, pp[2], Relation::C2p));
            }
            PlantShape::Basic | PlantShape::TwoForeign if rng.random_bool(0.3) => {
                // a peering link between origin and return that stays usable
                // only through an unknown upstream edge: not filtered
                p2p_home.insert((ts[0].min(ts[1]), ts[0].max(ts[1])));
            }
            _ => {}
        }

        let e = sc.epochs;
        let epochs = match class {
            PlantClass::Persistent => epochs_persistent(&mut rng, e),
            PlantClass::Transient => epochs_transient(&mut rng, e),
            PlantClass::Flash => epochs_single(&mut rng, e),
            PlantClass::Shared => {
                if pi % 2 == 0 {
                    epochs_single(&mut rng, e)
                } else {
                    epochs_transient(&mut rng, e)
                }
            }
            PlantClass::Filtered => {
                if rng.random_bool(0.5) && e >= 10 {
                    epochs_persistent(&mut rng, e)
                } else {
                    epochs_transient(&mut rng, e.max(2))
                }
            }
        };
        plan.plants.push(Plant {
            class: *class,
            shape,
            peers: group,
            prefix,
            path,
            origin,
            ret,
            epochs,
            home: a,
            expect_filtered: *class == PlantClass::Filtered,
        });
    }
    for (x, y) in p2p_home {
        plan.relations.push((x, y, Relation::P2p));
    }
    // peering among foreign-only transits; never on a detour's endpoints
    for w in countries[sc.home_countries..].windows(2) {
        let x = plan.transits[&w[0]][1];
        let y = plan.transits[&w[1]][1];
        plan.relations.push((x, y, Relation::P2p));
    }

    // Noise routes: constant paths that never form a definite detour.
    let kinds = [
        NoiseKind::PossibleOnly,
        NoiseKind::UnknownHop,
        NoiseKind::AmbiguousHop,
        NoiseKind::AsSetHop,
    ];
    for (pi, p) in plan.peers.clone().iter().enumerate() {
        for k in 0..sc.noise_per_peer {
            let Some((prefix, owner)) = pick_prefix(&mut rng, p.asn, p.country) else {
                break;
            };
            let t = plan.transit(p.country, k);
            let kind = kinds[(pi + k) % kinds.len()];
            let mid = match kind {
                NoiseKind::PossibleOnly => multi[&p.country],
                NoiseKind::UnknownHop => dark,
                NoiseKind::AmbiguousHop => ambiguous,
                NoiseKind::AsSetHop => Asn::AS_SET,
            };
            plan.noise.push((
                kind,
                PathOverride {
                    peer: pi,
                    prefix,
                    path: vec![p.asn, t, mid, owner],
                    epochs: BTreeSet::new(),
                },
            ));
        }
    }

    if hijack_on {
        let p = plan.peers[0].clone();
        if let Some((prefix, _)) = pick_prefix(&mut rng, p.asn, p.country) {
            let start = rng.random_range(0..sc.epochs.saturating_sub(1).max(1));
            let epochs: BTreeSet<u32> = (start..(start + 2).min(sc.epochs)).collect();
            plan.hijack = Some(PathOverride {
                peer: 0,
                prefix,
                path: vec![p.asn, plan.transit(p.country, 0), hijacker],
                epochs,
            });
        }
    }

    if sc.superseded_snapshot {
        let pi = 0;
        let p = plan.peers[pi].clone();
        if let Some((prefix, owner)) = pick_prefix(&mut rng, p.asn, p.country) {
            let epoch = rng.random_range(0..sc.epochs);
            let foreign = plan.transit(countries[sc.home_countries], 2);
            let path = vec![
                p.asn,
                plan.transit(p.country, 0),
                foreign,
                plan.transit(p.country, 1),
                owner,
            ];
            plan.superseded = Some((
                p.collector,
                epoch,
                PathOverride {
                    peer: pi,
                    prefix,
                    path,
                    epochs: BTreeSet::from([epoch]),
                },
            ));
        }
    }

    plan.check()?;
    plan.traces = plan_traces(&plan)?;
    Ok(plan)
}

fn plan_traces(plan: &Plan) -> Result<Vec<PlannedTrace>, FixtureError> {
    let kinds = &plan.scenario.traceroutes;
    let basics: Vec<usize> = plan
        .plants
        .iter()
        .enumerate()
        .filter(|(_, p)| p.shape == PlantShape::Basic && !p.expect_filtered)
        .map(|(i, _)| i)
        .take(kinds.len())
        .collect();
    if basics.len() < kinds.len() {
        return Err(FixtureError::Scenario(format!(
            "{} traceroutes requested but only {} plants can carry one",
            kinds.len(),
            basics.len()
        )));
    }
    let router = |a: Asn, last: u8| host(plan.ases[&a].infra.expect("transit has routers"), last);
    let mut out = Vec::new();
    for (k, (&pi, &kind)) in basics.iter().zip(kinds).enumerate() {
        let pl = &plan.plants[pi];
        let peer = &plan.peers[pl.peers[0]];
        let peer_block = plan
            .prefixes
            .iter()
            .find(|p| p.owner == peer.asn)
            .expect("peer owns a prefix")
            .prefix;
        let (t1, f, t2) = (pl.path[1], pl.path[2], pl.path[3]);
        let spare = plan.transits[&pl.home]
            .iter()
            .copied()
            .find(|t| *t != t1 && *t != t2)
            .expect("three transits per country");
        let dst = host(pl.prefix, 10);
        let f_hop = if kind == TraceKind::NoCountry {
            // pick the alternate range whose country is neither home nor F's
            let fc = plan.ases[&f].country.unwrap();
            let ci = plan.countries.iter().position(|c| *c == fc).unwrap();
            let alt1 = plan.countries[(ci + 1) % plan.countries.len()];
            if alt1 != pl.home {
                router(f, 200)
            } else {
                router(f, 228)
            }
        } else {
            router(f, 1)
        };
        let jump = [1.0, 2.0, 90.0, 95.0, 96.0];
        let flat = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut hops: Vec<(Option<Ipv4Addr>, f64)> = match kind {
            TraceKind::Full | TraceKind::NoCountry => vec![
                (Some(host(peer_block, 254)), jump[0]),
                (Some(router(t1, 1)), jump[1]),
                (Some(f_hop), jump[2]),
                (Some(router(t2, 1)), jump[3]),
                (Some(dst), jump[4]),
            ],
            TraceKind::NoRtt => vec![
                (Some(host(peer_block, 254)), flat[0]),
                (Some(router(t1, 1)), flat[1]),
                (Some(f_hop), flat[2]),
                (Some(router(t2, 1)), flat[3]),
                (Some(dst), flat[4]),
            ],
            TraceKind::Incongruent => vec![
                (Some(host(peer_block, 254)), 1.0),
                (Some(router(spare, 1)), 2.0),
                (Some(f_hop), 90.0),
                (Some(router(t2, 1)), 95.0),
                (Some(dst), 96.0),
            ],
            TraceKind::Short => vec![
                (Some(host(peer_block, 254)), 1.0),
                (None, 0.0),
                (Some(router(t1, 1)), 2.0),
                (None, 0.0),
            ],
            TraceKind::Inserted => vec![
                (Some(host(peer_block, 254)), 1.0),
                (Some(router(spare, 1)), 1.5),
                (Some(router(t1, 1)), 2.0),
                (Some(f_hop), 90.0),
                (Some(router(t2, 1)), 95.0),
                (Some(dst), 96.0),
            ],
        };
        // add a timeout in the middle now and then; it never changes a verdict
        if k % 3 == 2 && kind != TraceKind::Short {
            hops.insert(2, (None, 0.0));
        }
        let result = TracerouteResult {
            probe_id: format!("probe-{k:03}"),
            src_asn: peer.asn,
            src_country: peer.country,
            dst_ip: dst,
            hops: hops
                .into_iter()
                .enumerate()
                .map(|(i, (ip, rtt))| TracerouteHop {
                    ttl: i as u32 + 1,
                    ip,
                    rtts: match ip {
                        Some(_) => vec![rtt + 0.4, rtt, rtt + 0.2],
                        None => vec![],
                    },
                })
                .collect(),
        };
        out.push(PlannedTrace {
            plant: pi,
            kind,
            result,
        });
    }
    Ok(out)
}

/// Longest run of consecutive epochs in a set.
pub fn longest_run(epochs: &BTreeSet<u32>) -> u32 {
    let mut best = 0;
    let mut run = 0;
    let mut prev: Option<u32> = None;
    for &e in epochs {
        run = if prev == Some(e.wrapping_sub(1)) {
            run + 1
        } else {
            1
        };
        best = best.max(run);
        prev = Some(e);
    }
    best
}

/// Override lookup for route generation.
pub(crate) fn override_index(plan: &Plan) -> HashMap<(usize, Ipv4Net), Vec<&PathOverride>> {
    let mut m: HashMap<(usize, Ipv4Net), Vec<&PathOverride>> = HashMap::new();
    for (_, o) in &plan.noise {
        m.entry((o.peer, o.prefix)).or_default().push(o);
    }
    if let Some(o) = &plan.hijack {
        m.entry((o.peer, o.prefix)).or_default().push(o);
    }
    m
}
