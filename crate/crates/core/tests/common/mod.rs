//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use detour_core::detect::DetourKey;
use detour_core::fixtures::{generate, Manifest, Scenario};
use detour_core::pipeline::{run_all, RunAll, RunConfig};
use detour_core::types::Asn;
use ipnet::Ipv4Net;

pub const T0: u64 = 1_451_606_400;

pub fn be16(v: u16) -> [u8; 2] {
    v.to_be_bytes()
}

pub fn be32(v: u32) -> [u8; 4] {
    v.to_be_bytes()
}

pub fn record(subtype: u16, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(be32((T0 + 3600) as u32));
    out.extend(be16(13));
    out.extend(be16(subtype));
    out.extend(be32(body.len() as u32));
    out.extend_from_slice(body);
    out
}

/// Peer table with one 4-byte-ASN peer and one 2-byte-ASN peer.
pub fn peer_table() -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(be32(0x0102_0304));
    b.extend(be16(0));
    b.extend(be16(2));
    b.push(0b10);
    b.extend(be32(1));
    b.extend([198, 51, 100, 1]);
    b.extend(be32(4_200_000_001));
    b.push(0b00);
    b.extend(be32(2));
    b.extend([198, 51, 100, 2]);
    b.extend(be16(64_500));
    record(1, &b)
}

pub fn as_path_attr(segments: &[(u8, &[u32])]) -> Vec<u8> {
    let mut v = Vec::new();
    for (t, asns) in segments {
        v.push(*t);
        v.push(asns.len() as u8);
        for a in *asns {
            v.extend(be32(*a));
        }
    }
    let mut a = vec![0x40, 1, 1, 0];
    a.extend([0x40, 2, v.len() as u8]);
    a.extend(v);
    a
}

pub fn rib_entry(seq: u32, prefix: [u8; 3], plen: u8, entries: &[(u16, Vec<u8>)]) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend(be32(seq));
    b.push(plen);
    b.extend(&prefix[..(plen as usize).div_ceil(8)]);
    b.extend(be16(entries.len() as u16));
    for (idx, attrs) in entries {
        b.extend(be16(*idx));
        b.extend(be32(0));
        b.extend(be16(attrs.len() as u16));
        b.extend(attrs);
    }
    record(2, &b)
}

pub fn hand_built() -> Vec<u8> {
    let mut f = peer_table();
    f.extend(rib_entry(
        0,
        [203, 0, 113],
        24,
        &[
            (
                0,
                as_path_attr(&[(2, &[4_200_000_001, 70_000, 70_000, 70_000, 3356])]),
            ),
            (
                1,
                as_path_attr(&[(2, &[64_500, 174]), (1, &[65_001, 65_002])]),
            ),
        ],
    ));
    f.extend(rib_entry(
        1,
        [10, 16, 0],
        12,
        &[(1, as_path_attr(&[(2, &[64_500, 64_500, 2914])]))],
    ));
    f
}

pub fn asns(v: &[u32]) -> Vec<Asn> {
    v.iter().copied().map(Asn).collect()
}

pub fn net(s: &str) -> Ipv4Net {
    s.parse().unwrap()
}

pub fn run_bundle(scenario: &Scenario) -> (Manifest, RunAll) {
    let dir = tempfile::tempdir().unwrap();
    let m = generate(scenario, dir.path()).unwrap();
    let cfg = RunConfig::load(&dir.path().join(&m.config)).unwrap();
    let all = run_all(&cfg).unwrap();
    (m, all)
}

pub fn epochs_by_key(all: &RunAll) -> BTreeMap<DetourKey, Vec<u32>> {
    let mut out: BTreeMap<DetourKey, Vec<u32>> = BTreeMap::new();
    for d in &all.detect.run.detours {
        out.entry(d.key.clone()).or_default().push(d.epoch);
    }
    out
}

/// Every way a pipeline run disagrees with the bundle's ground truth.
pub fn mismatches(m: &Manifest, all: &RunAll) -> Vec<String> {
    let mut bad = Vec::new();
    let got = epochs_by_key(all);
    let want: BTreeMap<DetourKey, Vec<u32>> = m
        .truth
        .detours
        .iter()
        .map(|d| (d.key.clone(), d.epochs.clone()))
        .collect();
    for (k, e) in &want {
        match got.get(k) {
            None => bad.push(format!("missed {k}")),
            Some(g) if g != e => bad.push(format!("{k}: epochs {g:?}, expected {e:?}")),
            _ => {}
        }
    }
    for k in got.keys().filter(|k| !want.contains_key(*k)) {
        bad.push(format!("unexpected {k}"));
    }

    let filtered: BTreeSet<&DetourKey> = all.detect.run.filtered.iter().map(|d| &d.key).collect();
    let want_filtered: BTreeSet<&DetourKey> = m.truth.filtered.iter().map(|d| &d.key).collect();
    if filtered != want_filtered {
        bad.push(format!(
            "filtered keys differ: {} found, {} expected",
            filtered.len(),
            want_filtered.len()
        ));
    }

    let scored: BTreeMap<&DetourKey, _> = all
        .dynamics
        .scored
        .iter()
        .map(|s| (&s.timeline.key, &s.metrics))
        .collect();
    for d in &m.truth.detours {
        if let Some(met) = scored.get(&d.key) {
            if met.is_transient != d.transient || met.is_flash != d.flash {
                bad.push(format!(
                    "{}: transient/flash {}/{}, expected {}/{}",
                    d.key, met.is_transient, met.is_flash, d.transient, d.flash
                ));
            }
        }
    }

    let rep = &all.dynamics.report;
    for (name, got, want) in [
        ("raw", &rep.per_country_raw, &m.truth.per_country_raw),
        ("dedup", &rep.per_country_dedup, &m.truth.per_country_dedup),
    ] {
        let got_countries: BTreeSet<_> = got.countries.keys().collect();
        let want_countries: BTreeSet<_> = want.keys().collect();
        if got_countries != want_countries {
            bad.push(format!(
                "{name} countries {got_countries:?}, expected {want_countries:?}"
            ));
        }
        for (c, w) in want {
            let g = got.countries.get(c).map(|a| a.average);
            if g != Some(*w) {
                bad.push(format!("{name} average for {c}: {g:?}, expected {w}"));
            }
        }
    }
    if all.detect.run.counters.detoured_after_filter != m.truth.detoured_entries {
        bad.push("detoured entry count differs".into());
    }
    if all.detect.run.counters.errors != 0 {
        bad.push(format!(
            "{} detection errors",
            all.detect.run.counters.errors
        ));
    }
    let mut s = all.validate.summary.clone();
    s.unmatched_traceroutes = 0;
    if s != m.truth.validation {
        bad.push(format!(
            "validation {s:?}, expected {:?}",
            m.truth.validation
        ));
    }
    bad
}
