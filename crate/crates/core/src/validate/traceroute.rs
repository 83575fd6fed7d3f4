//! Traceroute results as JSON lines.

use std::io::{BufRead, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::types::{Asn, CountryCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteHop {
    pub ttl: u32,
    /// `None` for a hop that timed out.
    pub ip: Option<Ipv4Addr>,
    #[serde(default, alias = "rtt_ms")]
    pub rtts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteResult {
    pub probe_id: String,
    pub src_asn: Asn,
    pub src_country: CountryCode,
    pub dst_ip: Ipv4Addr,
    pub hops: Vec<TracerouteHop>,
}

impl TracerouteResult {
    pub fn responsive(&self) -> impl Iterator<Item = (Ipv4Addr, &TracerouteHop)> {
        self.hops.iter().filter_map(|h| h.ip.map(|ip| (ip, h)))
    }

    pub fn responsive_count(&self) -> usize {
        self.responsive().count()
    }

    pub fn check(&self) -> Result<(), String> {
        for w in self.hops.windows(2) {
            if w[1].ttl <= w[0].ttl {
                return Err(format!("ttl {} follows {}", w[1].ttl, w[0].ttl));
            }
        }
        for h in &self.hops {
            if h.ip.is_some() && h.rtts.is_empty() {
                return Err(format!("responsive hop at ttl {} has no rtt", h.ttl));
            }
            if let Some(r) = h.rtts.iter().find(|r| !r.is_finite() || **r < 0.0) {
                return Err(format!("bad rtt {r} at ttl {}", h.ttl));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TracerouteError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },
}

pub fn read_traceroutes<R: BufRead>(
    reader: R,
    path: &str,
) -> Result<Vec<TracerouteResult>, TracerouteError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| TracerouteError::Io {
            path: path.to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| TracerouteError::Line {
            path: path.to_string(),
            line: i + 1,
            reason,
        };
        let tr: TracerouteResult = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        tr.check().map_err(bad)?;
        out.push(tr);
    }
    Ok(out)
}

pub fn load_traceroutes(path: &Path) -> Result<Vec<TracerouteResult>, TracerouteError> {
    let f = std::fs::File::open(path).map_err(|source| TracerouteError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_traceroutes(std::io::BufReader::new(f), &path.display().to_string())
}

pub fn write_traceroutes<W: Write>(mut w: W, trs: &[TracerouteResult]) -> std::io::Result<()> {
    for t in trs {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
