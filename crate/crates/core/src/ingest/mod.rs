//! RIB ingestion: MRT TABLE_DUMP_V2 and a line-oriented text format, both
//! normalized into [`RouteRecord`]s bucketed into 8-hour sampling epochs.

use std::collections::BTreeSet;
use std::net::IpAddr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::types::Asn;

pub mod mrt;
pub mod sampling;
pub mod text;

pub use mrt::{parse_mrt, parse_mrt_reader, scan_mrt_peers};
pub use sampling::{latest_per_peer_epoch, plan_latest_per_peer_epoch, PeerId, SnapshotSummary};
pub use text::{format_text_line, parse_text_reader, parse_text_rib, scan_text_peers};

/// Width of one sampling epoch: three RIBs per day.
pub const EPOCH_SECONDS: u64 = 8 * 3600;

/// One (peer, prefix, AS path) observation at a sampling epoch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RouteRecord {
    pub peer_ip: IpAddr,
    pub peer_asn: Asn,
    pub prefix: Ipv4Net,
    /// Normalized path: prepending removed, loop-free, AS_SETs replaced by
    /// [`Asn::AS_SET`].
    pub as_path: Vec<Asn>,
    pub origin_asn: Asn,
    pub epoch: u32,
    pub snapshot_time: u64,
}

impl RouteRecord {
    pub fn peer(&self) -> PeerId {
        PeerId {
            ip: self.peer_ip,
            asn: self.peer_asn,
        }
    }
}

/// Counters for entries that were skipped or rejected while parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub loops_rejected: u64,
    pub empty_paths: u64,
    pub confederation_rejected: u64,
    pub zero_asn_rejected: u64,
    pub missing_as_path: u64,
    pub as_set_paths: u64,
    pub ipv6_skipped: u64,
    pub unknown_subtypes: u64,
    pub other_record_types: u64,
}

impl IngestStats {
    pub fn merge(&mut self, o: &IngestStats) {
        self.loops_rejected += o.loops_rejected;
        self.empty_paths += o.empty_paths;
        self.confederation_rejected += o.confederation_rejected;
        self.zero_asn_rejected += o.zero_asn_rejected;
        self.missing_as_path += o.missing_as_path;
        self.as_set_paths += o.as_set_paths;
        self.ipv6_skipped += o.ipv6_skipped;
        self.unknown_subtypes += o.unknown_subtypes;
        self.other_record_types += o.other_record_types;
    }

    fn count_rejection(&mut self, r: PathRejection) {
        match r {
            PathRejection::Empty => self.empty_paths += 1,
            PathRejection::Loop => self.loops_rejected += 1,
            PathRejection::Confederation => self.confederation_rejected += 1,
            PathRejection::ZeroAsn => self.zero_asn_rejected += 1,
        }
    }
}

/// All routes from one RIB dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RibSnapshot {
    pub source_uri: String,
    pub snapshot_time: u64,
    pub records: Vec<RouteRecord>,
    pub peer_count: usize,
    pub stats: IngestStats,
}

impl RibSnapshot {
    pub fn from_records(
        source_uri: String,
        snapshot_time: u64,
        records: Vec<RouteRecord>,
        stats: IngestStats,
    ) -> Self {
        let peer_count = records
            .iter()
            .map(|r| (r.peer_ip, r.peer_asn))
            .collect::<BTreeSet<_>>()
            .len();
        RibSnapshot {
            source_uri,
            snapshot_time,
            records,
            peer_count,
            stats,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed MRT data at byte offset {offset}: {reason}")]
    Malformed {
        path: String,
        offset: u64,
        reason: String,
    },
    #[error("{path}: truncated MRT data at byte offset {offset} ({} complete records kept)", .snapshot.records.len())]
    Truncated {
        path: String,
        offset: u64,
        /// Every record decoded before the truncation point.
        snapshot: Box<RibSnapshot>,
    },
    #[error("{path}: line {line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("snapshot time {snapshot_time} precedes window start {window_start}")]
    BeforeWindow {
        snapshot_time: u64,
        window_start: u64,
    },
}

/// Epoch index of a snapshot: whole 8-hour buckets since the window start.
pub fn epoch_of(snapshot_time: u64, window_start: u64) -> Result<u32, IngestError> {
    if snapshot_time < window_start {
        return Err(IngestError::BeforeWindow {
            snapshot_time,
            window_start,
        });
    }
    let e = (snapshot_time - window_start) / EPOCH_SECONDS;
    Ok(u32::try_from(e).unwrap_or(u32::MAX))
}

/// One AS_PATH segment as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PathSegment {
    Sequence(Vec<Asn>),
    Set(Vec<Asn>),
    ConfedSequence(Vec<Asn>),
    ConfedSet(Vec<Asn>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathRejection {
    Empty,
    Loop,
    Confederation,
    ZeroAsn,
}

/// Flattens segments into a hop list: sets become one [`Asn::AS_SET`] hop,
/// prepending collapses, loops and confederation segments are rejected.
pub fn normalize_path(segments: &[PathSegment]) -> Result<Vec<Asn>, PathRejection> {
    let mut hops = Vec::new();
    for seg in segments {
        match seg {
            PathSegment::Sequence(asns) => {
                if asns.iter().any(|a| a.is_as_set()) {
                    return Err(PathRejection::ZeroAsn);
                }
                hops.extend_from_slice(asns);
            }
            PathSegment::Set(_) => hops.push(Asn::AS_SET),
            PathSegment::ConfedSequence(_) | PathSegment::ConfedSet(_) => {
                return Err(PathRejection::Confederation)
            }
        }
    }
    normalize_hops(&hops)
}

/// Collapses consecutive duplicates and rejects non-adjacent repeats. The
/// AS_SET marker is exempt from the loop rule.
pub fn normalize_hops(hops: &[Asn]) -> Result<Vec<Asn>, PathRejection> {
    let mut out: Vec<Asn> = Vec::with_capacity(hops.len());
    for &h in hops {
        if out.last() != Some(&h) {
            out.push(h);
        }
    }
    if out.is_empty() {
        return Err(PathRejection::Empty);
    }
    let mut seen = std::collections::HashSet::with_capacity(out.len());
    for &h in &out {
        if !h.is_as_set() && !seen.insert(h) {
            return Err(PathRejection::Loop);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn asns(v: &[u32]) -> Vec<Asn> {
        v.iter().copied().map(Asn).collect()
    }

    #[test]
    fn epoch_bucket_edges() {
        assert_eq!(epoch_of(28799, 0).unwrap(), 0);
        assert_eq!(epoch_of(28800, 0).unwrap(), 1);
        assert!(matches!(
            epoch_of(5, 10),
            Err(IngestError::BeforeWindow { .. })
        ));
    }

    #[test]
    fn thirty_one_days_is_ninety_three_epochs() {
        let start = 1_451_606_400;
        let end = start + 31 * 86_400;
        let epochs: BTreeSet<u32> = (start..end)
            .step_by(600)
            .map(|t| epoch_of(t, start).unwrap())
            .collect();
        assert_eq!(epochs.len(), 93);
        assert_eq!(*epochs.iter().next_back().unwrap(), 92);
        assert_eq!(epoch_of(end, start).unwrap(), 93);
    }

    #[test]
    fn prepending_is_stripped() {
        let p = normalize_hops(&asns(&[65001, 65002, 65002, 65003])).unwrap();
        assert_eq!(p, asns(&[65001, 65002, 65003]));
    }

    #[test]
    fn loops_are_rejected() {
        assert_eq!(
            normalize_hops(&asns(&[65001, 65002, 65001])),
            Err(PathRejection::Loop)
        );
    }

    #[test]
    fn as_sets_become_markers() {
        let p = normalize_path(&[
            PathSegment::Sequence(asns(&[1, 2])),
            PathSegment::Set(asns(&[7, 8])),
            PathSegment::Sequence(asns(&[3])),
            PathSegment::Set(asns(&[9])),
        ])
        .unwrap();
        assert_eq!(p, vec![Asn(1), Asn(2), Asn::AS_SET, Asn(3), Asn::AS_SET]);
    }

    #[test]
    fn confederations_rejected() {
        assert_eq!(
            normalize_path(&[
                PathSegment::ConfedSequence(asns(&[1])),
                PathSegment::Sequence(asns(&[2])),
            ]),
            Err(PathRejection::Confederation)
        );
        assert_eq!(normalize_path(&[]), Err(PathRejection::Empty));
    }

    #[test]
    fn literal_zero_rejected() {
        assert_eq!(
            normalize_path(&[PathSegment::Sequence(asns(&[1, 0, 2]))]),
            Err(PathRejection::ZeroAsn)
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalization_is_idempotent(raw in proptest::collection::vec(1u32..8, 0..12)) {
                let hops = asns(&raw);
                if let Ok(once) = normalize_hops(&hops) {
                    prop_assert_eq!(normalize_hops(&once).unwrap(), once.clone());
                    prop_assert!(once.windows(2).all(|w| w[0] != w[1]));
                }
            }

            #[test]
            fn epochs_partition_the_window(offset in 0u64..(93 * EPOCH_SECONDS)) {
                let e = epoch_of(offset, 0).unwrap() as u64;
                prop_assert!(e * EPOCH_SECONDS <= offset);
                prop_assert!(offset < (e + 1) * EPOCH_SECONDS);
            }
        }
    }
}
