//! One observation per peer per epoch: when several RIBs from the same peer
//! fall in one epoch, only the latest snapshot's routes for that peer count.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::{epoch_of, IngestError, RibSnapshot};
use crate::types::Asn;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeerId {
    pub ip: IpAddr,
    pub asn: Asn,
}

/// Cheap description of a RIB file: its time and the peers it carries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotSummary {
    pub source_uri: String,
    /// `None` for a file without any entries.
    pub snapshot_time: Option<u64>,
    pub peers: BTreeSet<PeerId>,
}

/// For each summary, the peers whose routes should be kept from it.
///
/// A peer is kept from the snapshot with the greatest time inside each epoch;
/// equal times fall back to the smaller `source_uri`.
pub fn plan_latest_per_peer_epoch(
    summaries: &[SnapshotSummary],
    window_start: u64,
) -> Result<Vec<BTreeSet<PeerId>>, IngestError> {
    // (peer, epoch) -> (time, source, index) of the winner
    let mut winner: BTreeMap<(PeerId, u32), (u64, &str, usize)> = BTreeMap::new();
    for (i, s) in summaries.iter().enumerate() {
        let Some(t) = s.snapshot_time else { continue };
        let epoch = epoch_of(t, window_start)?;
        for &p in &s.peers {
            let cand = (t, s.source_uri.as_str(), i);
            winner
                .entry((p, epoch))
                .and_modify(|w| {
                    if cand.0 > w.0 || (cand.0 == w.0 && cand.1 < w.1) {
                        *w = cand;
                    }
                })
                .or_insert(cand);
        }
    }
    let mut keep = vec![BTreeSet::new(); summaries.len()];
    for ((peer, _), (_, _, i)) in winner {
        keep[i].insert(peer);
    }
    Ok(keep)
}

/// In-memory variant of [`plan_latest_per_peer_epoch`].
pub fn latest_per_peer_epoch(
    snapshots: Vec<RibSnapshot>,
    window_start: u64,
) -> Result<Vec<RibSnapshot>, IngestError> {
    let summaries: Vec<SnapshotSummary> = snapshots
        .iter()
        .map(|s| SnapshotSummary {
            source_uri: s.source_uri.clone(),
            snapshot_time: (!s.records.is_empty()).then_some(s.snapshot_time),
            peers: s.records.iter().map(|r| r.peer()).collect(),
        })
        .collect();
    let keep = plan_latest_per_peer_epoch(&summaries, window_start)?;
    Ok(snapshots
        .into_iter()
        .zip(keep)
        .map(|(mut s, keep)| {
            s.records.retain(|r| keep.contains(&r.peer()));
            RibSnapshot::from_records(s.source_uri, s.snapshot_time, s.records, s.stats)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_text_reader;

    fn snap(name: &str, text: &str) -> RibSnapshot {
        parse_text_reader(text.as_bytes(), name, 0).unwrap()
    }

    #[test]
    fn later_snapshot_in_epoch_wins_per_peer() {
        let early = snap(
            "a",
            "100|10.0.0.1|100|1.0.0.0/24|100 200\n100|10.0.0.2|300|1.0.0.0/24|300 200\n",
        );
        let late = snap("b", "200|10.0.0.1|100|1.0.0.0/24|100 400 200\n");
        let next_epoch = snap("c", "28800|10.0.0.1|100|1.0.0.0/24|100 200\n");
        let out = latest_per_peer_epoch(vec![early, late, next_epoch], 0).unwrap();
        // peer .1 superseded in "a"; peer .2 only appears there
        assert_eq!(out[0].records.len(), 1);
        assert_eq!(out[0].records[0].peer_asn, Asn(300));
        assert_eq!(out[1].records.len(), 1);
        assert_eq!(out[2].records.len(), 1);
        assert_eq!(out[0].peer_count, 1);
    }

    #[test]
    fn equal_times_prefer_smaller_source() {
        let a = snap("a", "100|10.0.0.1|100|1.0.0.0/24|100 200\n");
        let b = snap("b", "100|10.0.0.1|100|1.0.0.0/24|100 300 200\n");
        let out = latest_per_peer_epoch(vec![b, a], 0).unwrap();
        assert!(out[0].records.is_empty());
        assert_eq!(out[1].records.len(), 1);
    }
}
