//! Longest-prefix-match table over IPv4 prefixes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use ipnet::Ipv4Net;

use super::ownership::PrefixOwnership;
use crate::csvio::{self, CsvError};
use crate::types::Asn;

/// One hash map per prefix length, probed from /32 down.
#[derive(Debug, Clone)]
pub struct PrefixTable<T> {
    by_len: Vec<HashMap<u32, T>>,
    present: u64,
}

impl<T> Default for PrefixTable<T> {
    fn default() -> Self {
        PrefixTable {
            by_len: (0..=32).map(|_| HashMap::new()).collect(),
            present: 0,
        }
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

impl<T> PrefixTable<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: Ipv4Net, value: T) -> Option<T> {
        let len = prefix.prefix_len();
        self.present |= 1 << len;
        self.by_len[len as usize].insert(u32::from(prefix.network()) & mask(len), value)
    }

    pub fn get(&self, prefix: Ipv4Net) -> Option<&T> {
        let len = prefix.prefix_len();
        self.by_len[len as usize].get(&(u32::from(prefix.network()) & mask(len)))
    }

    pub fn longest_match(&self, ip: Ipv4Addr) -> Option<(Ipv4Net, &T)> {
        let x = u32::from(ip);
        for len in (0..=32u8).rev() {
            if self.present & (1 << len) == 0 {
                continue;
            }
            let key = x & mask(len);
            if let Some(v) = self.by_len[len as usize].get(&key) {
                let net = Ipv4Net::new(Ipv4Addr::from(key), len).expect("len <= 32");
                return Some((net, v));
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.by_len.iter().map(|m| m.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.present == 0
    }

    /// Entries ordered by (network, length).
    pub fn entries(&self) -> Vec<(Ipv4Net, &T)> {
        let mut out: Vec<(Ipv4Net, &T)> = self
            .by_len
            .iter()
            .enumerate()
            .flat_map(|(len, m)| {
                m.iter()
                    .map(move |(k, v)| (Ipv4Net::new(Ipv4Addr::from(*k), len as u8).unwrap(), v))
            })
            .collect();
        out.sort_by_key(|(n, _)| *n);
        out
    }
}

/// Global routing table: prefix to originating AS.
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    table: PrefixTable<Asn>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from ownership-filtered prefixes. A multi-origin prefix maps to
    /// the origin seen on the most days, then the lowest ASN.
    pub fn from_ownership(owned: &[PrefixOwnership]) -> Self {
        let mut best: HashMap<Ipv4Net, (usize, Asn)> = HashMap::new();
        for o in owned {
            let cand = (o.days_seen.len(), o.origin_asn);
            best.entry(o.prefix)
                .and_modify(|b| {
                    if cand.0 > b.0 || (cand.0 == b.0 && cand.1 < b.1) {
                        *b = cand;
                    }
                })
                .or_insert(cand);
        }
        let mut t = RoutingTable::new();
        for (p, (_, asn)) in best {
            t.insert(p, asn);
        }
        t
    }

    pub fn insert(&mut self, prefix: Ipv4Net, asn: Asn) {
        self.table.insert(prefix.trunc(), asn);
    }

    pub fn lookup(&self, ip: Ipv4Addr) -> Option<Asn> {
        self.table.longest_match(ip).map(|(_, a)| *a)
    }

    pub fn longest_match(&self, ip: Ipv4Addr) -> Option<(Ipv4Net, Asn)> {
        self.table.longest_match(ip).map(|(n, a)| (n, *a))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "prefix,asn")?;
        for (p, a) in self.table.entries() {
            writeln!(w, "{p},{a}")?;
        }
        Ok(())
    }

    pub fn from_csv_reader<R: Read>(reader: R, path: &str) -> Result<Self, CsvError> {
        let mut t = RoutingTable::new();
        csvio::for_each_row(reader, path, "prefix", 2, |_, rec| {
            let p: Ipv4Net = rec[0]
                .parse()
                .map_err(|e| format!("bad prefix {:?}: {e}", &rec[0]))?;
            let a: Asn = rec[1]
                .parse()
                .map_err(|e| format!("bad asn {:?}: {e}", &rec[1]))?;
            t.insert(p, a);
            Ok(())
        })?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, CsvError> {
        Self::from_csv_reader(csvio::open(path)?, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn longest_match_wins() {
        let mut t = RoutingTable::new();
        t.insert("10.1.0.0/16".parse().unwrap(), Asn(100));
        t.insert("10.1.2.0/24".parse().unwrap(), Asn(200));
        assert_eq!(t.lookup("10.1.2.3".parse().unwrap()), Some(Asn(200)));
        assert_eq!(t.lookup("10.1.3.3".parse().unwrap()), Some(Asn(100)));
        assert_eq!(t.lookup("11.0.0.1".parse().unwrap()), None);
    }

    #[test]
    fn default_route_matches_everything() {
        let mut t = RoutingTable::new();
        t.insert("0.0.0.0/0".parse().unwrap(), Asn(7));
        assert_eq!(t.lookup("203.0.113.9".parse().unwrap()), Some(Asn(7)));
    }

    #[test]
    fn multi_origin_prefers_most_days() {
        let p: Ipv4Net = "10.0.0.0/24".parse().unwrap();
        let owned = vec![
            PrefixOwnership {
                prefix: p,
                origin_asn: Asn(5),
                days_seen: (0..20).collect::<BTreeSet<_>>(),
            },
            PrefixOwnership {
                prefix: p,
                origin_asn: Asn(3),
                days_seen: (0..16).collect(),
            },
        ];
        let t = RoutingTable::from_ownership(&owned);
        assert_eq!(t.lookup("10.0.0.1".parse().unwrap()), Some(Asn(5)));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = RoutingTable::new();
        t.insert("10.1.0.0/16".parse().unwrap(), Asn(100));
        t.insert("10.1.2.0/24".parse().unwrap(), Asn(200));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = RoutingTable::from_csv_reader(&buf[..], "t").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.lookup("10.1.2.3".parse().unwrap()), Some(Asn(200)));
    }
}
