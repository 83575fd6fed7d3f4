//! TABLE_DUMP_V2 decoding against hand-assembled bytes and the fixture writer.

mod common;

use common::*;

use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};

use detour_core::fixtures::mrt_writer::{write_rib, write_rib_gz, MrtRoute};
use detour_core::ingest::{
    format_text_line, parse_mrt, parse_mrt_reader, parse_text_reader, IngestError, PathSegment,
    RouteRecord,
};
use detour_core::types::Asn;
use ipnet::Ipv4Net;

#[test]
fn hand_built_dump_decodes_exactly() {
    let snap = parse_mrt_reader(&hand_built()[..], "hand", T0).unwrap();
    assert_eq!(snap.snapshot_time, T0 + 3600);
    assert_eq!(snap.peer_count, 2);
    let got: Vec<(IpAddr, u32, Ipv4Net, Vec<Asn>, u32, u32)> = snap
        .records
        .iter()
        .map(|r| {
            (
                r.peer_ip,
                r.peer_asn.0,
                r.prefix,
                r.as_path.clone(),
                r.origin_asn.0,
                r.epoch,
            )
        })
        .collect();
    let p1 = IpAddr::V4(Ipv4Addr::new(198, 51, 100, 1));
    let p2 = IpAddr::V4(Ipv4Addr::new(198, 51, 100, 2));
    assert_eq!(
        got,
        vec![
            (
                p1,
                4_200_000_001,
                net("203.0.113.0/24"),
                asns(&[4_200_000_001, 70_000, 3356]),
                3356,
                0
            ),
            (
                p2,
                64_500,
                net("203.0.113.0/24"),
                asns(&[64_500, 174, 0]),
                0,
                0
            ),
            (
                p2,
                64_500,
                net("10.16.0.0/12"),
                asns(&[64_500, 2914]),
                2914,
                0
            ),
        ]
    );
    assert_eq!(snap.stats.as_set_paths, 1);
}

#[test]
fn every_truncation_is_reported_with_complete_records() {
    let full = hand_built();
    let boundaries = {
        let mut b = vec![0usize];
        let mut at = 0;
        while at < full.len() {
            let len = u32::from_be_bytes(full[at + 8..at + 12].try_into().unwrap()) as usize;
            at += 12 + len;
            b.push(at);
        }
        b
    };
    // records complete after the k-th MRT record: peer table, 2 routes, 1 route
    let complete = [0usize, 0, 2, 3];
    for cut in 1..full.len() {
        let res = parse_mrt_reader(&full[..cut], "cut", T0);
        let k = boundaries.iter().rposition(|b| *b <= cut).unwrap();
        if boundaries.contains(&cut) {
            assert_eq!(res.unwrap().records.len(), complete[k], "cut at {cut}");
        } else {
            match res {
                Err(IngestError::Truncated {
                    snapshot, offset, ..
                }) => {
                    assert_eq!(snapshot.records.len(), complete[k], "cut at {cut}");
                    assert!(offset <= cut as u64);
                }
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }
}

#[test]
fn rib_entry_before_peer_table_is_malformed() {
    let mut f = rib_entry(0, [10, 0, 0], 8, &[(0, as_path_attr(&[(2, &[1, 2])]))]);
    f.extend(peer_table());
    assert!(matches!(
        parse_mrt_reader(&f[..], "x", T0),
        Err(IngestError::Malformed { offset: 0, .. })
    ));
}

#[test]
fn out_of_range_peer_index_is_malformed() {
    let mut f = peer_table();
    f.extend(rib_entry(
        0,
        [10, 0, 0],
        8,
        &[(7, as_path_attr(&[(2, &[1, 2])]))],
    ));
    match parse_mrt_reader(&f[..], "x", T0) {
        Err(IngestError::Malformed { reason, .. }) => assert!(reason.contains("peer index")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bad_prefix_length_is_malformed() {
    let mut f = peer_table();
    f.extend(rib_entry(
        0,
        [10, 0, 0],
        24,
        &[(0, as_path_attr(&[(2, &[1, 2])]))],
    ));
    let at = f.len() - (2 + 4 + 2 + as_path_attr(&[(2, &[1, 2])]).len()) - 2 - 3 - 1;
    f[at] = 40;
    assert!(matches!(
        parse_mrt_reader(&f[..], "x", T0),
        Err(IngestError::Malformed { .. })
    ));
}

#[test]
fn other_record_types_are_skipped() {
    let mut f = hand_built();
    let mut other = Vec::new();
    other.extend(be32(0));
    other.extend(be16(16));
    other.extend(be16(4));
    other.extend(be32(3));
    other.extend([1, 2, 3]);
    f.extend(other);
    let snap = parse_mrt_reader(&f[..], "x", T0).unwrap();
    assert_eq!(snap.records.len(), 3);
    assert_eq!(snap.stats.other_record_types, 1);
}

fn grid() -> Vec<MrtRoute> {
    let peers = [(1u8, 4_200_000_001u32), (2, 64_500), (3, 196_615)];
    let mut out = Vec::new();
    for (i, asn) in peers {
        for (j, p) in ["192.0.2.0/24", "100.64.0.0/20"].iter().enumerate() {
            let mut seq = vec![Asn(asn), Asn(asn)];
            seq.extend(asns(&[6939, 1299 + j as u32, 65_536 + i as u32]));
            let mut segments = vec![PathSegment::Sequence(seq)];
            if i == 3 && j == 1 {
                segments.push(PathSegment::Set(asns(&[7, 8])));
            }
            out.push(MrtRoute {
                peer_ip: IpAddr::V4(Ipv4Addr::new(10, 0, 0, i)),
                peer_asn: Asn(asn),
                prefix: net(p),
                segments,
            });
        }
    }
    out
}

#[test]
fn three_peers_two_prefixes_round_trip() {
    let mut buf = Vec::new();
    write_rib(&mut buf, (T0 + 28_800 * 2 + 5) as u32, &grid()).unwrap();
    let snap = parse_mrt_reader(&buf[..], "grid", T0).unwrap();
    assert_eq!(snap.records.len(), 6);
    assert_eq!(snap.peer_count, 3);
    for r in &snap.records {
        assert_eq!(r.epoch, 2);
        assert_eq!(r.as_path[0], r.peer_asn);
        assert_eq!(
            r.as_path.len(),
            if r.origin_asn.is_as_set() { 5 } else { 4 }
        );
        assert_eq!(r.as_path.iter().filter(|a| **a == r.peer_asn).count(), 1);
    }
}

#[test]
fn gzip_bzip2_plain_and_text_agree() {
    let dir = tempfile::tempdir().unwrap();
    let ts = (T0 + 100) as u32;
    let plain = dir.path().join("r.mrt");
    let gz = dir.path().join("r.mrt.gz");
    let bz = dir.path().join("r.mrt.bz2");
    let mut raw = Vec::new();
    write_rib(&mut raw, ts, &grid()).unwrap();
    std::fs::write(&plain, &raw).unwrap();
    write_rib_gz(std::fs::File::create(&gz).unwrap(), ts, &grid()).unwrap();
    let mut enc = bzip2::write::BzEncoder::new(
        std::fs::File::create(&bz).unwrap(),
        bzip2::Compression::fast(),
    );
    enc.write_all(&raw).unwrap();
    enc.finish().unwrap();

    let mut base: Vec<RouteRecord> = parse_mrt(&plain, T0).unwrap().records;
    base.sort();
    for p in [&gz, &bz] {
        let mut r = parse_mrt(p, T0).unwrap().records;
        r.sort();
        assert_eq!(r, base, "{}", p.display());
    }
    let text: String = base.iter().map(|r| format_text_line(r) + "\n").collect();
    let mut t = parse_text_reader(text.as_bytes(), "text", T0)
        .unwrap()
        .records;
    t.sort();
    assert_eq!(t, base);
}

#[test]
fn truncated_gzip_keeps_partial_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut raw = Vec::new();
    write_rib(&mut raw, (T0 + 1) as u32, &grid()).unwrap();
    raw.truncate(raw.len() - 5);
    let p = dir.path().join("cut.mrt.gz");
    let mut enc = flate2::write::GzEncoder::new(
        std::fs::File::create(&p).unwrap(),
        flate2::Compression::fast(),
    );
    enc.write_all(&raw).unwrap();
    enc.finish().unwrap();
    match parse_mrt(&p, T0) {
        Err(IngestError::Truncated { snapshot, .. }) => assert_eq!(snapshot.records.len(), 3),
        other => panic!("{other:?}"),
    }
}
