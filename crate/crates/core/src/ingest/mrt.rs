//! MRT TABLE_DUMP_V2 reader (RFC 6396): PEER_INDEX_TABLE plus
//! RIB_IPV4_UNICAST entries. Input may be gzip or bzip2 compressed.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use ipnet::Ipv4Net;

use super::{
    epoch_of, normalize_path, IngestError, IngestStats, PathSegment, PeerId, RibSnapshot,
    RouteRecord, SnapshotSummary,
};
use crate::types::Asn;

pub const MRT_TABLE_DUMP_V2: u16 = 13;
pub const PEER_INDEX_TABLE: u16 = 1;
pub const RIB_IPV4_UNICAST: u16 = 2;
pub const RIB_IPV4_MULTICAST: u16 = 3;
pub const RIB_IPV6_UNICAST: u16 = 4;
pub const RIB_IPV6_MULTICAST: u16 = 5;

pub const ATTR_AS_PATH: u8 = 2;
pub const SEG_AS_SET: u8 = 1;
pub const SEG_AS_SEQUENCE: u8 = 2;
pub const SEG_CONFED_SEQUENCE: u8 = 3;
pub const SEG_CONFED_SET: u8 = 4;

const HEADER_LEN: usize = 12;
/// Upper bound on a single record body; anything larger is a corrupt header.
pub const MAX_RECORD_LEN: usize = 1 << 26;

#[derive(Debug, Clone, Copy)]
struct PeerEntry {
    ip: IpAddr,
    asn: Asn,
}

/// Opens a file, transparently decompressing gzip or bzip2 by magic bytes.
fn open_maybe_compressed(path: &Path) -> io::Result<Box<dyn Read>> {
    let mut r = BufReader::new(File::open(path)?);
    let head = r.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(flate2::read::MultiGzDecoder::new(r)))
    } else if head.starts_with(b"BZh") {
        Ok(Box::new(bzip2::read::MultiBzDecoder::new(r)))
    } else {
        Ok(Box::new(r))
    }
}

pub fn parse_mrt(path: &Path, window_start: u64) -> Result<RibSnapshot, IngestError> {
    let name = path.display().to_string();
    let r = open_maybe_compressed(path).map_err(|source| IngestError::Io {
        path: name.clone(),
        source,
    })?;
    parse_mrt_reader(r, &name, window_start)
}

struct RecordReader<R> {
    inner: R,
    offset: u64,
    body: Vec<u8>,
}

enum Next {
    Record {
        offset: u64,
        timestamp: u32,
        mrt_type: u16,
        subtype: u16,
    },
    Eof,
    Truncated(u64),
    BadHeader(u64, String),
}

impl<R: Read> RecordReader<R> {
    fn next(&mut self) -> io::Result<Next> {
        let start = self.offset;
        let mut hdr = [0u8; HEADER_LEN];
        let got = read_full(&mut self.inner, &mut hdr)?;
        self.offset += got as u64;
        if got == 0 {
            return Ok(Next::Eof);
        }
        if got < HEADER_LEN {
            return Ok(Next::Truncated(start));
        }
        let timestamp = u32::from_be_bytes(hdr[0..4].try_into().unwrap());
        let mrt_type = u16::from_be_bytes(hdr[4..6].try_into().unwrap());
        let subtype = u16::from_be_bytes(hdr[6..8].try_into().unwrap());
        let len = u32::from_be_bytes(hdr[8..12].try_into().unwrap()) as usize;
        if len > MAX_RECORD_LEN {
            return Ok(Next::BadHeader(
                start,
                format!("record length {len} exceeds {MAX_RECORD_LEN}"),
            ));
        }
        self.body.resize(len, 0);
        let got = read_full(&mut self.inner, &mut self.body)?;
        self.offset += got as u64;
        if got < len {
            return Ok(Next::Truncated(start));
        }
        Ok(Next::Record {
            offset: start,
            timestamp,
            mrt_type,
            subtype,
        })
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

/// Bounds-checked big-endian cursor over a record body.
struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: u64,
}

type CursorResult<T> = Result<T, (u64, String)>;

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], base: u64) -> Self {
        Cursor { data, pos: 0, base }
    }

    fn offset(&self) -> u64 {
        self.base + self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> CursorResult<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err((
                self.offset(),
                format!(
                    "{what}: need {n} bytes, {} left",
                    self.data.len() - self.pos
                ),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> CursorResult<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> CursorResult<u16> {
        Ok(u16::from_be_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> CursorResult<u32> {
        Ok(u32::from_be_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn is_empty(&self) -> bool {
        self.pos >= self.data.len()
    }
}

fn parse_peer_table(c: &mut Cursor) -> CursorResult<Vec<PeerEntry>> {
    c.u32("collector bgp id")?;
    let name_len = c.u16("view name length")? as usize;
    c.take(name_len, "view name")?;
    let count = c.u16("peer count")? as usize;
    let mut peers = Vec::with_capacity(count);
    for _ in 0..count {
        let ptype = c.u8("peer type")?;
        c.u32("peer bgp id")?;
        let ip = if ptype & 0x01 != 0 {
            let b: [u8; 16] = c.take(16, "peer ipv6")?.try_into().unwrap();
            IpAddr::V6(Ipv6Addr::from(b))
        } else {
            let b: [u8; 4] = c.take(4, "peer ipv4")?.try_into().unwrap();
            IpAddr::V4(Ipv4Addr::from(b))
        };
        let asn = if ptype & 0x02 != 0 {
            c.u32("peer as4")?
        } else {
            c.u16("peer as2")? as u32
        };
        peers.push(PeerEntry { ip, asn: Asn(asn) });
    }
    Ok(peers)
}

/// Returns the AS_PATH segments, or `None` when the attribute is absent.
fn parse_as_path_attr(attrs: &[u8], base: u64) -> CursorResult<Option<Vec<PathSegment>>> {
    let mut c = Cursor::new(attrs, base);
    while !c.is_empty() {
        let flags = c.u8("attribute flags")?;
        let code = c.u8("attribute type")?;
        let len = if flags & 0x10 != 0 {
            c.u16("attribute length")? as usize
        } else {
            c.u8("attribute length")? as usize
        };
        let value_base = c.offset();
        let value = c.take(len, "attribute value")?;
        if code != ATTR_AS_PATH {
            continue;
        }
        let mut v = Cursor::new(value, value_base);
        let mut segments = Vec::new();
        while !v.is_empty() {
            let seg_type = v.u8("segment type")?;
            let n = v.u8("segment length")? as usize;
            let mut asns = Vec::with_capacity(n);
            for _ in 0..n {
                asns.push(Asn(v.u32("segment asn")?));
            }
            segments.push(match seg_type {
                SEG_AS_SET => PathSegment::Set(asns),
                SEG_AS_SEQUENCE => PathSegment::Sequence(asns),
                SEG_CONFED_SEQUENCE => PathSegment::ConfedSequence(asns),
                SEG_CONFED_SET => PathSegment::ConfedSet(asns),
                t => return Err((value_base, format!("unknown AS_PATH segment type {t}"))),
            });
        }
        return Ok(Some(segments));
    }
    Ok(None)
}

/// Parses TABLE_DUMP_V2 data from any reader. Records not of type 13 and
/// unsupported subtypes are skipped and counted.
pub fn parse_mrt_reader<R: Read>(
    reader: R,
    source_uri: &str,
    window_start: u64,
) -> Result<RibSnapshot, IngestError> {
    let mut rr = RecordReader {
        inner: reader,
        offset: 0,
        body: Vec::new(),
    };
    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    let mut peers: Option<Vec<PeerEntry>> = None;
    let mut snapshot_time: Option<u64> = None;
    let path = source_uri.to_string();
    let malformed = |(offset, reason): (u64, String)| IngestError::Malformed {
        path: path.clone(),
        offset,
        reason,
    };

    loop {
        let next = rr.next().map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        let (offset, timestamp, mrt_type, subtype) = match next {
            Next::Eof => break,
            Next::BadHeader(offset, reason) => return Err(malformed((offset, reason))),
            Next::Truncated(offset) => {
                let time = snapshot_time.unwrap_or(window_start);
                return Err(IngestError::Truncated {
                    path: path.clone(),
                    offset,
                    snapshot: Box::new(RibSnapshot::from_records(
                        path.clone(),
                        time,
                        records,
                        stats,
                    )),
                });
            }
            Next::Record {
                offset,
                timestamp,
                mrt_type,
                subtype,
            } => (offset, timestamp, mrt_type, subtype),
        };
        if mrt_type != MRT_TABLE_DUMP_V2 {
            stats.other_record_types += 1;
            continue;
        }
        let body_base = offset + HEADER_LEN as u64;
        let mut c = Cursor::new(&rr.body, body_base);
        match subtype {
            PEER_INDEX_TABLE => {
                peers = Some(parse_peer_table(&mut c).map_err(malformed)?);
                snapshot_time.get_or_insert(timestamp as u64);
            }
            RIB_IPV4_UNICAST => {
                let table = peers.as_ref().ok_or_else(|| {
                    malformed((offset, "RIB entry before PEER_INDEX_TABLE".into()))
                })?;
                let time = *snapshot_time.get_or_insert(timestamp as u64);
                let epoch =
                    epoch_of(time, window_start).map_err(|e| malformed((offset, e.to_string())))?;
                c.u32("sequence number").map_err(malformed)?;
                let plen = c.u8("prefix length").map_err(malformed)?;
                if plen > 32 {
                    return Err(malformed((
                        c.offset() - 1,
                        format!("IPv4 prefix length {plen}"),
                    )));
                }
                let nbytes = (plen as usize).div_ceil(8);
                let mut addr = [0u8; 4];
                addr[..nbytes].copy_from_slice(c.take(nbytes, "prefix").map_err(malformed)?);
                let prefix = Ipv4Net::new(Ipv4Addr::from(addr), plen)
                    .expect("length checked")
                    .trunc();
                let count = c.u16("entry count").map_err(malformed)?;
                for _ in 0..count {
                    let entry_at = c.offset();
                    let idx = c.u16("peer index").map_err(malformed)? as usize;
                    c.u32("originated time").map_err(malformed)?;
                    let attr_len = c.u16("attribute length").map_err(malformed)? as usize;
                    let attr_base = c.offset();
                    let attrs = c.take(attr_len, "attributes").map_err(malformed)?;
                    let peer = *table.get(idx).ok_or_else(|| {
                        malformed((
                            entry_at,
                            format!("peer index {idx} out of range ({})", table.len()),
                        ))
                    })?;
                    let Some(segments) = parse_as_path_attr(attrs, attr_base).map_err(malformed)?
                    else {
                        stats.missing_as_path += 1;
                        continue;
                    };
                    match normalize_path(&segments) {
                        Ok(as_path) => {
                            if as_path.contains(&Asn::AS_SET) {
                                stats.as_set_paths += 1;
                            }
                            let origin_asn = *as_path.last().expect("non-empty");
                            records.push(RouteRecord {
                                peer_ip: peer.ip,
                                peer_asn: peer.asn,
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
            }
            RIB_IPV6_UNICAST | RIB_IPV6_MULTICAST => stats.ipv6_skipped += 1,
            RIB_IPV4_MULTICAST => stats.unknown_subtypes += 1,
            _ => stats.unknown_subtypes += 1,
        }
    }

    Ok(RibSnapshot::from_records(
        path.clone(),
        snapshot_time.unwrap_or(window_start),
        records,
        stats,
    ))
}

/// Reads the time and peer table of an MRT RIB without decoding entries.
pub fn scan_mrt_peers(path: &Path) -> Result<SnapshotSummary, IngestError> {
    let name = path.display().to_string();
    let io_err = |source| IngestError::Io {
        path: name.clone(),
        source,
    };
    let mut rr = RecordReader {
        inner: open_maybe_compressed(path).map_err(io_err)?,
        offset: 0,
        body: Vec::new(),
    };
    loop {
        match rr.next().map_err(io_err)? {
            Next::BadHeader(offset, reason) => {
                return Err(IngestError::Malformed {
                    path: name.clone(),
                    offset,
                    reason,
                })
            }
            Next::Eof | Next::Truncated(_) => {
                return Ok(SnapshotSummary {
                    source_uri: name,
                    snapshot_time: None,
                    peers: BTreeSet::new(),
                })
            }
            Next::Record {
                offset,
                timestamp,
                mrt_type: MRT_TABLE_DUMP_V2,
                subtype: PEER_INDEX_TABLE,
            } => {
                let mut c = Cursor::new(&rr.body, offset + HEADER_LEN as u64);
                let peers = parse_peer_table(&mut c).map_err(|(offset, reason)| {
                    IngestError::Malformed {
                        path: name.clone(),
                        offset,
                        reason,
                    }
                })?;
                return Ok(SnapshotSummary {
                    source_uri: name.clone(),
                    snapshot_time: Some(timestamp as u64),
                    peers: peers
                        .into_iter()
                        .map(|p| PeerId {
                            ip: p.ip,
                            asn: p.asn,
                        })
                        .collect(),
                });
            }
            Next::Record { .. } => {}
        }
    }
}
