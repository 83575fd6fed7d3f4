//! Byte-level TABLE_DUMP_V2 writer for synthetic RIBs.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::IpAddr;

use ipnet::Ipv4Net;

use crate::ingest::mrt::{
    MRT_TABLE_DUMP_V2, PEER_INDEX_TABLE, RIB_IPV4_UNICAST, SEG_AS_SEQUENCE, SEG_AS_SET,
    SEG_CONFED_SEQUENCE, SEG_CONFED_SET,
};
use crate::ingest::{PathSegment, RouteRecord};
use crate::types::Asn;

const ATTR_ORIGIN: u8 = 1;
const ATTR_AS_PATH: u8 = 2;
const ATTR_NEXT_HOP: u8 = 3;
const FLAG_TRANSITIVE: u8 = 0x40;
const FLAG_EXTENDED: u8 = 0x10;

/// A whole MRT record: common header plus body.
pub fn mrt_record(timestamp: u32, mrt_type: u16, subtype: u16, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + body.len());
    out.extend_from_slice(&timestamp.to_be_bytes());
    out.extend_from_slice(&mrt_type.to_be_bytes());
    out.extend_from_slice(&subtype.to_be_bytes());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// PEER_INDEX_TABLE body. Every peer is written with a 4-byte AS number.
pub fn peer_index_body(collector_id: u32, view: &str, peers: &[(IpAddr, Asn)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&collector_id.to_be_bytes());
    b.extend_from_slice(&(view.len() as u16).to_be_bytes());
    b.extend_from_slice(view.as_bytes());
    b.extend_from_slice(&(peers.len() as u16).to_be_bytes());
    for (i, (ip, asn)) in peers.iter().enumerate() {
        let v6 = matches!(ip, IpAddr::V6(_));
        b.push(0x02 | v6 as u8);
        b.extend_from_slice(&(i as u32 + 1).to_be_bytes());
        match ip {
            IpAddr::V4(a) => b.extend_from_slice(&a.octets()),
            IpAddr::V6(a) => b.extend_from_slice(&a.octets()),
        }
        b.extend_from_slice(&asn.0.to_be_bytes());
    }
    b
}

fn attribute(out: &mut Vec<u8>, code: u8, value: &[u8]) {
    if value.len() > 255 {
        out.push(FLAG_TRANSITIVE | FLAG_EXTENDED);
        out.push(code);
        out.extend_from_slice(&(value.len() as u16).to_be_bytes());
    } else {
        out.push(FLAG_TRANSITIVE);
        out.push(code);
        out.push(value.len() as u8);
    }
    out.extend_from_slice(value);
}

/// AS_PATH attribute value with 4-byte AS numbers.
pub fn as_path_value(segments: &[PathSegment]) -> Vec<u8> {
    let mut v = Vec::new();
    for seg in segments {
        let (t, asns) = match seg {
            PathSegment::Sequence(a) => (SEG_AS_SEQUENCE, a),
            PathSegment::Set(a) => (SEG_AS_SET, a),
            PathSegment::ConfedSequence(a) => (SEG_CONFED_SEQUENCE, a),
            PathSegment::ConfedSet(a) => (SEG_CONFED_SET, a),
        };
        for chunk in asns.chunks(255) {
            v.push(t);
            v.push(chunk.len() as u8);
            for a in chunk {
                v.extend_from_slice(&a.0.to_be_bytes());
            }
        }
    }
    v
}

/// ORIGIN, AS_PATH (when given) and NEXT_HOP attributes.
pub fn route_attributes(segments: Option<&[PathSegment]>) -> Vec<u8> {
    let mut a = Vec::new();
    attribute(&mut a, ATTR_ORIGIN, &[0]);
    if let Some(s) = segments {
        attribute(&mut a, ATTR_AS_PATH, &as_path_value(s));
    }
    attribute(&mut a, ATTR_NEXT_HOP, &[192, 0, 2, 1]);
    a
}

/// RIB_IPV4_UNICAST body; entries are (peer index, attribute bytes).
pub fn rib_ipv4_body(sequence: u32, prefix: Ipv4Net, entries: &[(u16, Vec<u8>)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(&sequence.to_be_bytes());
    b.push(prefix.prefix_len());
    let nbytes = (prefix.prefix_len() as usize).div_ceil(8);
    b.extend_from_slice(&prefix.network().octets()[..nbytes]);
    b.extend_from_slice(&(entries.len() as u16).to_be_bytes());
    for (idx, attrs) in entries {
        b.extend_from_slice(&idx.to_be_bytes());
        b.extend_from_slice(&0u32.to_be_bytes());
        b.extend_from_slice(&(attrs.len() as u16).to_be_bytes());
        b.extend_from_slice(attrs);
    }
    b
}

/// One route to write: the peer, the prefix and the raw path segments.
#[derive(Debug, Clone)]
pub struct MrtRoute {
    pub peer_ip: IpAddr,
    pub peer_asn: Asn,
    pub prefix: Ipv4Net,
    pub segments: Vec<PathSegment>,
}

impl MrtRoute {
    /// The normalized record's path as a single sequence, with the AS_SET
    /// marker turned back into a one-member set.
    pub fn from_record(r: &RouteRecord) -> Self {
        let mut segments = Vec::new();
        let mut run = Vec::new();
        for a in &r.as_path {
            if a.is_as_set() {
                if !run.is_empty() {
                    segments.push(PathSegment::Sequence(std::mem::take(&mut run)));
                }
                segments.push(PathSegment::Set(vec![Asn(64512)]));
            } else {
                run.push(*a);
            }
        }
        if !run.is_empty() {
            segments.push(PathSegment::Sequence(run));
        }
        MrtRoute {
            peer_ip: r.peer_ip,
            peer_asn: r.peer_asn,
            prefix: r.prefix,
            segments,
        }
    }
}

/// Writes a complete RIB dump: the peer table followed by one
/// RIB_IPV4_UNICAST record per prefix, prefixes in ascending order.
pub fn write_rib<W: Write>(mut w: W, timestamp: u32, routes: &[MrtRoute]) -> io::Result<()> {
    let mut peers: Vec<(IpAddr, Asn)> = routes.iter().map(|r| (r.peer_ip, r.peer_asn)).collect();
    peers.sort();
    peers.dedup();
    let index: BTreeMap<(IpAddr, Asn), u16> = peers
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, i as u16))
        .collect();
    w.write_all(&mrt_record(
        timestamp,
        MRT_TABLE_DUMP_V2,
        PEER_INDEX_TABLE,
        &peer_index_body(0x0a00_0001, "synthetic", &peers),
    ))?;

    let mut by_prefix: BTreeMap<Ipv4Net, Vec<(u16, Vec<u8>)>> = BTreeMap::new();
    for r in routes {
        by_prefix.entry(r.prefix).or_default().push((
            index[&(r.peer_ip, r.peer_asn)],
            route_attributes(Some(&r.segments)),
        ));
    }
    for (seq, (prefix, entries)) in by_prefix.into_iter().enumerate() {
        w.write_all(&mrt_record(
            timestamp,
            MRT_TABLE_DUMP_V2,
            RIB_IPV4_UNICAST,
            &rib_ipv4_body(seq as u32, prefix, &entries),
        ))?;
    }
    Ok(())
}

/// Like [`write_rib`], gzip-compressed.
pub fn write_rib_gz<W: Write>(w: W, timestamp: u32, routes: &[MrtRoute]) -> io::Result<()> {
    let mut gz = flate2::write::GzEncoder::new(w, flate2::Compression::fast());
    write_rib(&mut gz, timestamp, routes)?;
    gz.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_mrt_reader;

    #[test]
    fn round_trip_through_parser() {
        let routes = vec![
            MrtRoute {
                peer_ip: "10.0.0.1".parse().unwrap(),
                peer_asn: Asn(4_200_000),
                prefix: "1.2.3.0/24".parse().unwrap(),
                segments: vec![PathSegment::Sequence(vec![
                    Asn(4_200_000),
                    Asn(4_200_000),
                    Asn(7),
                ])],
            },
            MrtRoute {
                peer_ip: "10.0.0.2".parse().unwrap(),
                peer_asn: Asn(5),
                prefix: "1.2.0.0/15".parse().unwrap(),
                segments: vec![
                    PathSegment::Sequence(vec![Asn(5)]),
                    PathSegment::Set(vec![Asn(8), Asn(9)]),
                ],
            },
        ];
        let mut buf = Vec::new();
        write_rib(&mut buf, 1_451_606_400, &routes).unwrap();
        let snap = parse_mrt_reader(&buf[..], "mem", 1_451_606_400).unwrap();
        assert_eq!(snap.peer_count, 2);
        assert_eq!(snap.records.len(), 2);
        let r = snap
            .records
            .iter()
            .find(|r| r.peer_asn == Asn(4_200_000))
            .unwrap();
        assert_eq!(r.as_path, vec![Asn(4_200_000), Asn(7)]);
        let s = snap.records.iter().find(|r| r.peer_asn == Asn(5)).unwrap();
        assert_eq!(s.as_path, vec![Asn(5), Asn::AS_SET]);
    }
}
