//! Pipe-separated text RIB format:
//!
//! ```text
//! # snapshot_time|peer_ip|peer_asn|prefix|as path
//! 1451606400|10.0.0.1|65001|203.0.113.0/24|65001 65002 {65010,65011} 65003
//! ```
//!
//! AS_SET segments are written in braces. IPv6 prefixes are skipped.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;

use super::{
    epoch_of, normalize_path, IngestError, IngestStats, PathSegment, PeerId, RibSnapshot,
    RouteRecord, SnapshotSummary,
};
use crate::types::Asn;

pub fn parse_text_rib(path: &Path, window_start: u64) -> Result<RibSnapshot, IngestError> {
    let name = path.display().to_string();
    let f = File::open(path).map_err(|source| IngestError::Io {
        path: name.clone(),
        source,
    })?;
    parse_text_reader(f, &name, window_start)
}

pub fn parse_text_reader<R: Read>(
    reader: R,
    source_uri: &str,
    window_start: u64,
) -> Result<RibSnapshot, IngestError> {
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut snapshot_time: Option<u64> = None;
    let line_err = |line: usize, reason: String| IngestError::Line {
        path: source_uri.to_string(),
        line,
        reason,
    };

    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: source_uri.to_string(),
            source,
        })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 5 {
            return Err(line_err(
                lineno,
                format!("expected 5 '|'-separated fields, found {}", fields.len()),
            ));
        }
        let time: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|e| line_err(lineno, format!("bad snapshot time {:?}: {e}", fields[0])))?;
        match snapshot_time {
            None => snapshot_time = Some(time),
            Some(t) if t != time => {
                return Err(line_err(
                    lineno,
                    format!("snapshot time {time} differs from earlier {t}"),
                ))
            }
            _ => {}
        }
        let peer_ip: IpAddr = fields[1]
            .trim()
            .parse()
            .map_err(|e| line_err(lineno, format!("bad peer ip {:?}: {e}", fields[1])))?;
        let peer_asn: Asn = fields[2]
            .parse()
            .map_err(|e| line_err(lineno, format!("bad peer asn {:?}: {e}", fields[2])))?;
        let prefix: IpNet = fields[3]
            .trim()
            .parse()
            .map_err(|e| line_err(lineno, format!("bad prefix {:?}: {e}", fields[3])))?;
        let segments = parse_path_field(fields[4]).map_err(|r| line_err(lineno, r))?;
        if segments.is_empty() {
            return Err(line_err(lineno, "empty AS path".into()));
        }
        let prefix = match prefix {
            IpNet::V4(p) => p.trunc(),
            IpNet::V6(_) => {
                stats.ipv6_skipped += 1;
                continue;
            }
        };
        let epoch = epoch_of(time, window_start).map_err(|e| line_err(lineno, e.to_string()))?;
        match normalize_path(&segments) {
            Ok(as_path) => {
                if as_path.contains(&Asn::AS_SET) {
                    stats.as_set_paths += 1;
                }
                let origin_asn = *as_path.last().expect("normalized paths are non-empty");
                records.push(RouteRecord {
                    peer_ip,
                    peer_asn,
                    prefix,
                    as_path,
                    origin_asn,
                    epoch,
                    snapshot_time: time,
                });
            }
            Err(r) => stats.count_rejection(r),
        }
    }

    Ok(RibSnapshot::from_records(
        source_uri.to_string(),
        snapshot_time.unwrap_or(window_start),
        records,
        stats,
    ))
}

fn parse_path_field(field: &str) -> Result<Vec<PathSegment>, String> {
    let mut segments = Vec::new();
    let mut seq = Vec::new();
    let mut rest = field.trim();
    while !rest.is_empty() {
        if let Some(after) = rest.strip_prefix('{') {
            let close = after
                .find('}')
                .ok_or_else(|| format!("unterminated AS_SET in {field:?}"))?;
            if !seq.is_empty() {
                segments.push(PathSegment::Sequence(std::mem::take(&mut seq)));
            }
            let members = after[..close]
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<Asn>().map_err(|e| format!("bad ASN {s:?}: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            segments.push(PathSegment::Set(members));
            rest = after[close + 1..].trim_start();
        } else {
            let end = rest
                .find(|c: char| c.is_whitespace() || c == '{')
                .unwrap_or(rest.len());
            let tok = &rest[..end];
            seq.push(
                tok.parse::<Asn>()
                    .map_err(|e| format!("bad ASN {tok:?}: {e}"))?,
            );
            rest = rest[end..].trim_start();
        }
    }
    if !seq.is_empty() {
        segments.push(PathSegment::Sequence(seq));
    }
    Ok(segments)
}

/// Renders a record in the text format; parsing the line yields the record
/// back.
pub fn format_text_line(r: &RouteRecord) -> String {
    let path: Vec<String> = r
        .as_path
        .iter()
        .map(|a| {
            if a.is_as_set() {
                "{}".to_string()
            } else {
                a.to_string()
            }
        })
        .collect();
    format!(
        "{}|{}|{}|{}|{}",
        r.snapshot_time,
        r.peer_ip,
        r.peer_asn,
        r.prefix,
        path.join(" ")
    )
}

/// Reads only the peer columns of a text RIB.
pub fn scan_text_peers(path: &Path) -> Result<SnapshotSummary, IngestError> {
    let name = path.display().to_string();
    let io_err = |source| IngestError::Io {
        path: name.clone(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut peers = BTreeSet::new();
    let mut time = None;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| IngestError::Line {
            path: name.clone(),
            line: idx + 1,
            reason: reason.to_string(),
        };
        let mut it = line.split('|');
        let t: u64 = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad snapshot time"))?;
        time.get_or_insert(t);
        let ip: IpAddr = it
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad("bad peer ip"))?;
        let asn: Asn = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad peer asn"))?;
        peers.insert(PeerId { ip, asn });
    }
    Ok(SnapshotSummary {
        source_uri: name,
        snapshot_time: time,
        peers,
    })
}
