//! Prefix ownership: an origin AS is trusted with a prefix only after
//! announcing it on enough distinct days.

use std::collections::{BTreeSet, HashMap};

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::types::Asn;

pub const DEFAULT_MIN_OWNERSHIP_DAYS: usize = 15;
pub const SECONDS_PER_DAY: u64 = 86_400;

/// UTC calendar day of a Unix timestamp.
pub fn utc_day(unix_seconds: u64) -> u64 {
    unix_seconds / SECONDS_PER_DAY
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PrefixOwnership {
    pub prefix: Ipv4Net,
    pub origin_asn: Asn,
    pub days_seen: BTreeSet<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OwnershipSplit {
    pub owned: Vec<PrefixOwnership>,
    /// Pairs below the day threshold: suspected transients or hijacks.
    pub transient: Vec<PrefixOwnership>,
}

/// Streaming accumulator of (day, prefix, origin) observations. Prefixes are
/// kept exactly as announced; no aggregation.
#[derive(Debug, Default)]
pub struct OwnershipAccumulator {
    days: HashMap<(Ipv4Net, Asn), BTreeSet<u64>>,
}

impl OwnershipAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, day: u64, prefix: Ipv4Net, origin: Asn) {
        self.days.entry((prefix, origin)).or_default().insert(day);
    }

    pub fn merge(&mut self, other: OwnershipAccumulator) {
        for (k, v) in other.days {
            self.days.entry(k).or_default().extend(v);
        }
    }

    pub fn finish(self, min_days: usize) -> OwnershipSplit {
        let mut split = OwnershipSplit::default();
        for ((prefix, origin_asn), days_seen) in self.days {
            let p = PrefixOwnership {
                prefix,
                origin_asn,
                days_seen,
            };
            if p.days_seen.len() >= min_days {
                split.owned.push(p);
            } else {
                split.transient.push(p);
            }
        }
        split.owned.sort();
        split.transient.sort();
        split
    }
}

pub fn filter_ownership(
    observations: impl IntoIterator<Item = (u64, Ipv4Net, Asn)>,
    min_days: usize,
) -> OwnershipSplit {
    let mut acc = OwnershipAccumulator::new();
    for (day, prefix, origin) in observations {
        acc.observe(day, prefix, origin);
    }
    acc.finish(min_days)
}
