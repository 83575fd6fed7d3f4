//! Whole-corpus detection with aggregate counters.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{detect, DetectOptions, DetectionVerdict, DetourKey, DetourRecord, Outcome};
use crate::detect::RelationshipDb;
use crate::geo::AsGeoMap;
use crate::ingest::{PeerId, RibSnapshot, RouteRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectCounters {
    pub total_entries: u64,
    pub definite_detour: u64,
    pub possible_only: u64,
    pub no_detour: u64,
    pub discarded_unknown_geo: u64,
    pub discarded_ambiguous_code: u64,
    pub not_same_country_endpoints: u64,
    pub filtered_by_peering: u64,
    pub errors: u64,
    pub detoured_before_filter: u64,
    pub detoured_after_filter: u64,
    pub filtered_percent: f64,
    pub unique_detours_before_filter: u64,
    pub unique_detours_after_filter: u64,
}

impl DetectCounters {
    fn bump(&mut self, o: Outcome) {
        let slot = match o {
            Outcome::DefiniteDetour => &mut self.definite_detour,
            Outcome::PossibleOnly => &mut self.possible_only,
            Outcome::NoDetour => &mut self.no_detour,
            Outcome::DiscardedUnknownGeo => &mut self.discarded_unknown_geo,
            Outcome::DiscardedAmbiguousCode => &mut self.discarded_ambiguous_code,
            Outcome::NotSameCountryEndpoints => &mut self.not_same_country_endpoints,
            Outcome::FilteredByPeering => &mut self.filtered_by_peering,
        };
        *slot += 1;
    }

    pub fn count(&self, o: Outcome) -> u64 {
        match o {
            Outcome::DefiniteDetour => self.definite_detour,
            Outcome::PossibleOnly => self.possible_only,
            Outcome::NoDetour => self.no_detour,
            Outcome::DiscardedUnknownGeo => self.discarded_unknown_geo,
            Outcome::DiscardedAmbiguousCode => self.discarded_ambiguous_code,
            Outcome::NotSameCountryEndpoints => self.not_same_country_endpoints,
            Outcome::FilteredByPeering => self.filtered_by_peering,
        }
    }
}

/// Accumulated result of detection over any number of snapshots.
///
/// Partial runs merge in any order; [`DetectRun::finish`] sorts and derives
/// the totals, so the result does not depend on input order.
#[derive(Debug, Clone, Default)]
pub struct DetectRun {
    /// Definite detours surviving the peering filter.
    pub detours: Vec<DetourRecord>,
    /// Detours removed by the peering filter.
    pub filtered: Vec<DetourRecord>,
    /// Epochs in which each peer contributed at least one route.
    pub peer_epochs: BTreeMap<PeerId, BTreeSet<u32>>,
    /// First few per-record errors, as text.
    pub error_samples: Vec<String>,
    pub counters: DetectCounters,
}

const MAX_ERROR_SAMPLES: usize = 20;

impl DetectRun {
    pub fn observe(
        &mut self,
        record: &RouteRecord,
        geo: &AsGeoMap,
        rel: &RelationshipDb,
        opts: DetectOptions,
    ) {
        self.counters.total_entries += 1;
        self.peer_epochs
            .entry(record.peer())
            .or_default()
            .insert(record.epoch);
        match detect(record, geo, rel, opts) {
            Ok(DetectionVerdict { outcome, detour }) => {
                self.counters.bump(outcome);
                match (outcome, detour) {
                    (Outcome::DefiniteDetour, Some(d)) => self.detours.push(d),
                    (Outcome::FilteredByPeering, Some(d)) => self.filtered.push(d),
                    _ => {}
                }
            }
            Err(e) => {
                self.counters.errors += 1;
                if self.error_samples.len() < MAX_ERROR_SAMPLES {
                    self.error_samples
                        .push(format!("{}: {e}", DetourKey::of(record)));
                }
            }
        }
    }

    pub fn observe_snapshot(
        &mut self,
        snap: &RibSnapshot,
        geo: &AsGeoMap,
        rel: &RelationshipDb,
        opts: DetectOptions,
    ) {
        for r in &snap.records {
            self.observe(r, geo, rel, opts);
        }
    }

    pub fn merge(mut self, mut other: DetectRun) -> DetectRun {
        self.detours.append(&mut other.detours);
        self.filtered.append(&mut other.filtered);
        for (p, e) in other.peer_epochs {
            self.peer_epochs.entry(p).or_default().extend(e);
        }
        self.error_samples.append(&mut other.error_samples);
        let c = &mut self.counters;
        let o = &other.counters;
        c.total_entries += o.total_entries;
        c.definite_detour += o.definite_detour;
        c.possible_only += o.possible_only;
        c.no_detour += o.no_detour;
        c.discarded_unknown_geo += o.discarded_unknown_geo;
        c.discarded_ambiguous_code += o.discarded_ambiguous_code;
        c.not_same_country_endpoints += o.not_same_country_endpoints;
        c.filtered_by_peering += o.filtered_by_peering;
        c.errors += o.errors;
        self
    }

    /// Sorts outputs and fills in the derived counters.
    pub fn finish(mut self) -> DetectRun {
        let order = |a: &DetourRecord, b: &DetourRecord| (a.epoch, &a.key).cmp(&(b.epoch, &b.key));
        self.detours.sort_by(order);
        self.filtered.sort_by(order);
        self.error_samples.sort();
        self.error_samples.truncate(MAX_ERROR_SAMPLES);

        let after: BTreeSet<&DetourKey> = self.detours.iter().map(|d| &d.key).collect();
        let mut before = after.clone();
        before.extend(self.filtered.iter().map(|d| &d.key));

        let c = &mut self.counters;
        c.detoured_after_filter = c.definite_detour;
        c.detoured_before_filter = c.definite_detour + c.filtered_by_peering;
        c.filtered_percent = if c.detoured_before_filter == 0 {
            0.0
        } else {
            100.0 * c.filtered_by_peering as f64 / c.detoured_before_filter as f64
        };
        c.unique_detours_after_filter = after.len() as u64;
        c.unique_detours_before_filter = before.len() as u64;
        self
    }
}

/// Runs detection over every snapshot in parallel.
pub fn detect_all(
    snapshots: &[RibSnapshot],
    geo: &AsGeoMap,
    rel: &RelationshipDb,
    opts: DetectOptions,
) -> DetectRun {
    snapshots
        .par_iter()
        .map(|s| {
            let mut run = DetectRun::default();
            run.observe_snapshot(s, geo, rel, opts);
            run
        })
        .reduce(DetectRun::default, DetectRun::merge)
        .finish()
}

/// One JSON object per detour, tagged with its outcome.
pub fn write_verdicts_jsonl<W: Write>(
    mut w: W,
    outcome: Outcome,
    detours: &[DetourRecord],
) -> std::io::Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        outcome: Outcome,
        #[serde(flatten)]
        detour: &'a DetourRecord,
    }
    for d in detours {
        serde_json::to_writer(&mut w, &Line { outcome, detour: d })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{EvidenceTag, Located};
    use crate::types::{countries, Asn};

    fn geo() -> AsGeoMap {
        let mut g = AsGeoMap::new();
        for (a, c) in [(1, "US"), (2, "US"), (3, "IN"), (4, "US")] {
            g.add(
                Asn(a),
                EvidenceTag::Prefix,
                &Located {
                    countries: countries(&[c]),
                    ambiguous: false,
                },
            );
        }
        g
    }

    fn snap(epoch: u32, paths: &[&[u32]]) -> RibSnapshot {
        let records = paths
            .iter()
            .enumerate()
            .map(|(i, p)| RouteRecord {
                peer_ip: "192.0.2.1".parse().unwrap(),
                peer_asn: Asn(p[0]),
                prefix: format!("10.0.{i}.0/24").parse().unwrap(),
                as_path: p.iter().map(|a| Asn(*a)).collect(),
                origin_asn: Asn(*p.last().unwrap()),
                epoch,
                snapshot_time: epoch as u64 * 28800,
            })
            .collect();
        RibSnapshot::from_records(
            format!("s{epoch}"),
            epoch as u64 * 28800,
            records,
            Default::default(),
        )
    }

    #[test]
    fn persistent_detour_counts_once() {
        let snaps: Vec<RibSnapshot> = (0..93)
            .map(|e| snap(e, &[&[1, 3, 4], &[1, 2, 4]]))
            .collect();
        let run = detect_all(
            &snaps,
            &geo(),
            &RelationshipDb::new(),
            DetectOptions::default(),
        );
        assert_eq!(run.counters.total_entries, 186);
        assert_eq!(run.counters.detoured_after_filter, 93);
        assert_eq!(run.counters.unique_detours_after_filter, 1);
        assert_eq!(run.counters.no_detour, 93);
    }

    #[test]
    fn all_filtered_by_provider_link() {
        let snaps: Vec<RibSnapshot> = (0..4).map(|e| snap(e, &[&[1, 2, 3, 4]])).collect();
        let mut rel = RelationshipDb::new();
        rel.insert_p2c(Asn(2), Asn(4));
        let run = detect_all(&snaps, &geo(), &rel, DetectOptions::default());
        assert_eq!(run.counters.detoured_before_filter, 4);
        assert_eq!(run.counters.detoured_after_filter, 0);
        assert_eq!(run.counters.filtered_percent, 100.0);
        assert_eq!(run.filtered.len(), 4);
    }

    #[test]
    fn order_does_not_matter() {
        let mut snaps: Vec<RibSnapshot> = (0..6)
            .map(|e| snap(e, &[&[1, 3, 4], &[1, 2, 3, 4]]))
            .collect();
        let a = detect_all(
            &snaps,
            &geo(),
            &RelationshipDb::new(),
            DetectOptions::default(),
        );
        snaps.reverse();
        let b = detect_all(
            &snaps,
            &geo(),
            &RelationshipDb::new(),
            DetectOptions::default(),
        );
        assert_eq!(a.detours, b.detours);
        assert_eq!(a.counters, b.counters);
    }

    #[test]
    fn verdict_lines_carry_outcome() {
        let run = detect_all(
            &[snap(0, &[&[1, 3, 4]])],
            &geo(),
            &RelationshipDb::new(),
            DetectOptions::default(),
        );
        let mut buf = Vec::new();
        write_verdicts_jsonl(&mut buf, Outcome::DefiniteDetour, &run.detours).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["outcome"], "definite_detour");
        assert_eq!(v["home_country"], "US");
        assert_eq!(v["key"]["as_path"], serde_json::json!([1, 3, 4]));
    }
}
