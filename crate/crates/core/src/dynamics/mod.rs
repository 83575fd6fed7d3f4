//! Detour dynamics: per-key presence timelines and the metrics derived
//! from them.

pub mod peers;
pub mod tables;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::detect::{DetourKey, DetourRecord};
use crate::ingest::EPOCH_SECONDS;
use crate::types::{Asn, CountryCode};

pub use peers::{
    detours_per_peer, per_country_average, representative_peers, CountryAverage, CountryAverages,
};
pub use tables::{
    flash_listing, peers_by_country, render_table_text, top_table, DynamicsReport, FlashRow, TopRow,
};

pub const EPOCH_HOURS: u64 = EPOCH_SECONDS / 3600;
pub const DEFAULT_TRANSIENT_HOURS: u64 = 72;

/// Fixed-length presence bitmap over the window's epochs.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Presence {
    len: u32,
    words: Vec<u64>,
}

impl Presence {
    pub fn new(len: u32) -> Self {
        Presence {
            len,
            words: vec![0; (len as usize).div_ceil(64)],
        }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut p = Presence::new(bits.len() as u32);
        for (i, b) in bits.iter().enumerate() {
            if *b {
                p.set(i as u32);
            }
        }
        p
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn set(&mut self, i: u32) {
        assert!(i < self.len, "epoch {i} outside window of {}", self.len);
        self.words[(i / 64) as usize] |= 1 << (i % 64);
    }

    pub fn get(&self, i: u32) -> bool {
        i < self.len && self.words[(i / 64) as usize] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.len).filter(|i| self.get(*i))
    }

    pub fn transitions(&self) -> u32 {
        (1..self.len)
            .filter(|i| self.get(i - 1) != self.get(*i))
            .count() as u32
    }

    pub fn longest_run(&self) -> u32 {
        let (mut best, mut cur) = (0, 0);
        for i in 0..self.len {
            if self.get(i) {
                cur += 1;
                best = best.max(cur);
            } else {
                cur = 0;
            }
        }
        best
    }

    pub fn reversed(&self) -> Presence {
        let mut r = Presence::new(self.len);
        for i in self.ones() {
            r.set(self.len - 1 - i);
        }
        r
    }
}

impl fmt::Debug for Presence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// One detour key's presence across the window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetourTimeline {
    pub key: DetourKey,
    pub peer_asn: Asn,
    pub home_country: CountryCode,
    pub detour_origin_asn: Asn,
    pub destination_asn: Asn,
    pub prefix_origin_asn: Asn,
    pub presence: Presence,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("detour at epoch {epoch} outside a window of {epochs} epochs: {key}")]
pub struct EpochOutOfWindow {
    pub key: DetourKey,
    pub epoch: u32,
    pub epochs: u32,
}

/// Groups detour records by key. Output is sorted by key.
pub fn build_timelines<'a>(
    records: impl IntoIterator<Item = &'a DetourRecord>,
    epochs: u32,
) -> Result<Vec<DetourTimeline>, EpochOutOfWindow> {
    let mut by_key: BTreeMap<&DetourKey, DetourTimeline> = BTreeMap::new();
    for r in records {
        if r.epoch >= epochs {
            return Err(EpochOutOfWindow {
                key: r.key.clone(),
                epoch: r.epoch,
                epochs,
            });
        }
        by_key
            .entry(&r.key)
            .or_insert_with(|| DetourTimeline {
                key: r.key.clone(),
                peer_asn: r.peer_asn,
                home_country: r.home_country,
                detour_origin_asn: r.detour_origin_asn,
                destination_asn: r.destination_asn(),
                prefix_origin_asn: r.prefix_origin_asn,
                presence: Presence::new(epochs),
            })
            .presence
            .set(r.epoch);
    }
    Ok(by_key.into_values().collect())
}

/// Number of distinct peers that saw each (prefix, path) detoured.
pub fn observer_counts(timelines: &[DetourTimeline]) -> HashMap<(ipnet::Ipv4Net, &[Asn]), usize> {
    let mut out: HashMap<(ipnet::Ipv4Net, &[Asn]), usize> = HashMap::new();
    for t in timelines {
        *out.entry((t.key.prefix, t.key.as_path.as_slice()))
            .or_default() += 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    I,
    II,
    III,
    IV,
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrant::I => "I",
            Quadrant::II => "II",
            Quadrant::III => "III",
            Quadrant::IV => "IV",
        })
    }
}

/// Raw counts behind the percentage metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricCounts {
    pub epochs: u32,
    pub uptime: u32,
    pub transitions: u32,
    pub longest_run: u32,
}

impl MetricCounts {
    pub fn of(p: &Presence) -> Self {
        MetricCounts {
            epochs: p.len(),
            uptime: p.count_ones(),
            transitions: p.transitions(),
            longest_run: p.longest_run(),
        }
    }

    pub fn flap_rate(&self) -> f64 {
        100.0 * self.transitions as f64 / self.epochs as f64
    }

    pub fn duty_cycle(&self) -> f64 {
        100.0 * self.uptime as f64 / self.epochs as f64
    }

    pub fn persistence_hours(&self) -> u64 {
        self.longest_run as u64 * EPOCH_HOURS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsMetrics {
    pub flap_rate: f64,
    pub duty_cycle: f64,
    pub persistence_hours: u64,
    pub is_transient: bool,
    pub is_flash: bool,
    pub quadrant: Quadrant,
}

/// Per-timeline metrics. `observers` is the number of peers that saw the
/// same prefix and path detoured.
pub fn metrics(
    presence: &Presence,
    observers: usize,
    transient_hours: u64,
    quadrant: Quadrant,
) -> DynamicsMetrics {
    let c = MetricCounts::of(presence);
    let is_transient = c.persistence_hours() <= transient_hours;
    DynamicsMetrics {
        flap_rate: c.flap_rate(),
        duty_cycle: c.duty_cycle(),
        persistence_hours: c.persistence_hours(),
        is_transient,
        is_flash: is_transient && c.uptime == 1 && observers == 1,
        quadrant,
    }
}

/// Quadrants relative to the mean flap rate (x) and mean duty cycle (y).
/// Points on a mean count as above it. All timelines must share one window,
/// so the comparison is done on raw counts without rounding.
pub fn assign_quadrants(counts: &[MetricCounts]) -> Vec<Quadrant> {
    let n = counts.len() as u64;
    let sum_t: u64 = counts.iter().map(|c| c.transitions as u64).sum();
    let sum_u: u64 = counts.iter().map(|c| c.uptime as u64).sum();
    counts
        .iter()
        .map(|c| {
            let high_flap = c.transitions as u64 * n >= sum_t;
            let high_duty = c.uptime as u64 * n >= sum_u;
            match (high_flap, high_duty) {
                (true, true) => Quadrant::I,
                (false, true) => Quadrant::II,
                (false, false) => Quadrant::III,
                (true, false) => Quadrant::IV,
            }
        })
        .collect()
}

/// A timeline together with its metrics.
#[derive(Debug, Clone)]
pub struct ScoredTimeline {
    pub timeline: DetourTimeline,
    pub metrics: DynamicsMetrics,
}

pub fn score_timelines(
    timelines: Vec<DetourTimeline>,
    transient_hours: u64,
) -> Vec<ScoredTimeline> {
    let counts: Vec<MetricCounts> = timelines
        .iter()
        .map(|t| MetricCounts::of(&t.presence))
        .collect();
    let quadrants = assign_quadrants(&counts);
    let observers: Vec<usize> = {
        let obs = observer_counts(&timelines);
        timelines
            .iter()
            .map(|t| obs[&(t.key.prefix, t.key.as_path.as_slice())])
            .collect()
    };
    timelines
        .into_iter()
        .zip(quadrants)
        .zip(observers)
        .map(|((t, q), o)| {
            let m = metrics(&t.presence, o, transient_hours, q);
            ScoredTimeline {
                timeline: t,
                metrics: m,
            }
        })
        .collect()
}

/// Writes the metrics CSV, one row per timeline in input order.
pub fn write_metrics_csv<W: std::io::Write>(w: W, scored: &[ScoredTimeline]) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "key",
        "home_country",
        "flap_rate",
        "duty_cycle",
        "persistence_hours",
        "transient",
        "flash",
        "quadrant",
    ])?;
    for s in scored {
        let m = &s.metrics;
        out.write_record([
            s.timeline.key.to_string(),
            s.timeline.home_country.to_string(),
            format!("{:.6}", m.flap_rate),
            format!("{:.6}", m.duty_cycle),
            m.persistence_hours.to_string(),
            m.is_transient.to_string(),
            m.is_flash.to_string(),
            m.quadrant.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> Presence {
        Presence::from_bits(&s.bytes().map(|b| b == b'1').collect::<Vec<_>>())
    }

    fn m(s: &str) -> DynamicsMetrics {
        metrics(&bits(s), 1, DEFAULT_TRANSIENT_HOURS, Quadrant::I)
    }

    #[test]
    fn alternating_pattern() {
        let c = MetricCounts::of(&bits("101010"));
        assert_eq!((c.uptime, c.transitions), (3, 5));
        assert!((c.flap_rate() - 500.0 / 6.0).abs() < 1e-9);
        assert_eq!(c.duty_cycle(), 50.0);
    }

    #[test]
    fn always_present() {
        let x = m(&"1".repeat(93));
        assert_eq!(x.duty_cycle, 100.0);
        assert_eq!(x.flap_rate, 0.0);
        assert_eq!(x.persistence_hours, 744);
        assert!(!x.is_transient);
    }

    #[test]
    fn single_epoch() {
        let mut p = Presence::new(93);
        p.set(40);
        let c = MetricCounts::of(&p);
        assert_eq!(c.transitions, 2);
        assert!((c.duty_cycle() - 100.0 / 93.0).abs() < 1e-9);
        let x = metrics(&p, 1, DEFAULT_TRANSIENT_HOURS, Quadrant::I);
        assert!(x.is_flash && x.is_transient);
        assert_eq!(x.persistence_hours, 8);

        let mut edge = Presence::new(93);
        edge.set(92);
        assert_eq!(edge.transitions(), 1);
        assert!(!metrics(&p, 2, DEFAULT_TRANSIENT_HOURS, Quadrant::I).is_flash);
    }

    #[test]
    fn transient_boundary_is_inclusive() {
        let nine = format!("{}{}", "1".repeat(9), "0".repeat(84));
        assert_eq!(m(&nine).persistence_hours, 72);
        assert!(m(&nine).is_transient);
        let ten = format!("{}{}", "1".repeat(10), "0".repeat(83));
        assert!(!m(&ten).is_transient);
    }

    #[test]
    fn quadrant_rules() {
        let c = |transitions, uptime| MetricCounts {
            epochs: 10,
            uptime,
            transitions,
            longest_run: 1,
        };
        // means: transitions 2, uptime 5
        let q = assign_quadrants(&[c(0, 9), c(4, 9), c(0, 1), c(4, 1), c(2, 5)]);
        assert_eq!(
            q,
            vec![
                Quadrant::II,
                Quadrant::I,
                Quadrant::III,
                Quadrant::IV,
                Quadrant::I
            ]
        );
        assert_eq!(assign_quadrants(&[c(3, 3)]), vec![Quadrant::I]);
        assert!(assign_quadrants(&[]).is_empty());
    }

    fn rec(peer: &str, path: &[u32], epoch: u32) -> DetourRecord {
        let key = DetourKey {
            peer_ip: peer.parse().unwrap(),
            prefix: "10.0.0.0/24".parse().unwrap(),
            as_path: path.iter().map(|a| Asn(*a)).collect(),
        };
        DetourRecord {
            key,
            peer_asn: Asn(path[0]),
            epoch,
            home_country: CountryCode::must("US"),
            detour_origin_asn: Asn(path[0]),
            detour_destination_asns: vec![Asn(path[1])],
            detour_destination_countries: crate::types::countries(&["IN"]),
            detour_return_asn: Asn(path[2]),
            prefix_origin_asn: Asn(path[2]),
            foreign_hop_count: 1,
            repeat_departure: false,
        }
    }

    #[test]
    fn timelines_group_by_full_key() {
        let recs = vec![
            rec("192.0.2.1", &[1, 2, 3], 0),
            rec("192.0.2.1", &[1, 2, 3], 1),
            rec("192.0.2.1", &[1, 2, 3], 2),
            rec("192.0.2.1", &[1, 4, 3], 2),
        ];
        let t = build_timelines(&recs, 5).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].presence.count_ones(), 3);
        assert!(build_timelines(&[], 5).unwrap().is_empty());
        assert!(build_timelines(&recs, 2).is_err());
    }

    #[test]
    fn flash_needs_single_observer() {
        let recs = vec![
            rec("192.0.2.1", &[1, 2, 3], 4),
            rec("192.0.2.2", &[1, 2, 3], 7),
        ];
        let scored = score_timelines(build_timelines(&recs, 93).unwrap(), DEFAULT_TRANSIENT_HOURS);
        assert!(scored.iter().all(|s| !s.metrics.is_flash));
        let scored = score_timelines(
            build_timelines(&recs[..1], 93).unwrap(),
            DEFAULT_TRANSIENT_HOURS,
        );
        assert!(scored[0].metrics.is_flash);
    }

    #[test]
    fn metrics_csv_header() {
        let scored = score_timelines(
            build_timelines(&[rec("192.0.2.1", &[1, 2, 3], 0)], 2).unwrap(),
            DEFAULT_TRANSIENT_HOURS,
        );
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &scored).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "key,home_country,flap_rate,duty_cycle,persistence_hours,transient,flash,quadrant"
        );
        assert_eq!(
            lines.next().unwrap(),
            "192.0.2.1 10.0.0.0/24 1 2 3,US,50.000000,50.000000,8,true,true,I"
        );
    }

    fn arb_presence() -> impl Strategy<Value = Presence> {
        (1usize..=130)
            .prop_flat_map(|n| proptest::collection::vec(any::<bool>(), n))
            .prop_filter("needs one bit", |b| b.iter().any(|x| *x))
            .prop_map(|b| Presence::from_bits(&b))
    }

    proptest! {
        #[test]
        fn full_duty_iff_no_flaps(p in arb_presence()) {
            let c = MetricCounts::of(&p);
            let full = c.uptime == c.epochs;
            prop_assert_eq!(full, c.transitions == 0 && c.longest_run == c.epochs);
            prop_assert_eq!(c.transitions == 0, full);
            prop_assert!(c.flap_rate() <= 100.0 && c.duty_cycle() > 0.0 && c.duty_cycle() <= 100.0);
        }

        #[test]
        fn time_reversal(p in arb_presence()) {
            prop_assert_eq!(MetricCounts::of(&p), MetricCounts::of(&p.reversed()));
        }

        #[test]
        fn flash_formulas(p in arb_presence()) {
            let x = metrics(&p, 1, DEFAULT_TRANSIENT_HOURS, Quadrant::I);
            if x.is_flash {
                prop_assert!(x.is_transient);
                let e = p.len() as f64;
                prop_assert!((x.duty_cycle - 100.0 / e).abs() < 1e-9);
                if p.len() > 1 {
                    let edge = (x.flap_rate - 100.0 / e).abs() < 1e-9;
                    let interior = (x.flap_rate - 200.0 / e).abs() < 1e-9;
                    prop_assert!(edge || interior);
                }
            }
        }
    }
}
