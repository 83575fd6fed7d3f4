//! Infrastructure (router) IP evidence, IP-to-AS datasets and IXP
//! membership files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ipdb::{GeoDbStack, Located};
use super::lpm::RoutingTable;
use crate::csvio::{self, CsvError};
use crate::types::{parse_country, Asn, CountryCode, CountryEvidence, CountrySet};

/// Crowd-sourced router locations count only at or above this confidence.
pub const MIN_SOURCE_CONFIDENCE: f64 = 0.90;

/// One source's claim about a router IP.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceEvidence {
    pub source: String,
    pub country: Option<CountryEvidence>,
    /// Present for sources that grade their answers (crowd-sourced maps).
    pub confidence: Option<f64>,
}

impl SourceEvidence {
    pub fn passes(&self) -> bool {
        self.confidence.is_none_or(|c| c >= MIN_SOURCE_CONFIDENCE)
    }
}

/// Union of all passing source countries and the database answer.
pub fn geolocate_infra_ip(ip: Ipv4Addr, sources: &[SourceEvidence], db: &GeoDbStack) -> Located {
    let mut out = db.locate_ip(ip);
    for s in sources.iter().filter(|s| s.passes()) {
        match s.country {
            Some(CountryEvidence::Country(c)) => {
                out.countries.insert(c);
            }
            Some(CountryEvidence::Ambiguous) => out.ambiguous = true,
            None => {}
        }
    }
    out
}

/// Rows of the infra CSV grouped by IP.
pub type InfraEvidence = BTreeMap<Ipv4Addr, Vec<SourceEvidence>>;

pub fn read_infra_csv<R: Read>(reader: R, path: &str) -> Result<InfraEvidence, CsvError> {
    let mut out: InfraEvidence = BTreeMap::new();
    csvio::for_each_row(reader, path, "ip", 2, |_, rec| {
        let ip: Ipv4Addr = rec[0]
            .parse()
            .map_err(|e| format!("bad ip {:?}: {e}", &rec[0]))?;
        let source = rec[1].to_string();
        let country = match rec.get(2).unwrap_or("") {
            "" => None,
            c => Some(parse_country(c).map_err(|e| e.to_string())?),
        };
        let confidence = match rec.get(3).unwrap_or("") {
            "" => None,
            c => {
                let v: f64 = c
                    .parse()
                    .map_err(|e| format!("bad confidence {c:?}: {e}"))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("confidence {v} outside [0, 1]"));
                }
                Some(v)
            }
        };
        out.entry(ip).or_default().push(SourceEvidence {
            source,
            country,
            confidence,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_infra(path: &Path) -> Result<InfraEvidence, CsvError> {
    read_infra_csv(csvio::open(path)?, &path.display().to_string())
}

/// An IP-to-AS dataset (e.g. alias-resolved router maps).
#[derive(Debug, Clone, Default)]
pub struct IpAsMap {
    map: HashMap<Ipv4Addr, Asn>,
}

impl IpAsMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ip: Ipv4Addr, asn: Asn) {
        self.map.insert(ip, asn);
    }

    pub fn get(&self, ip: Ipv4Addr) -> Option<Asn> {
        self.map.get(&ip).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn from_csv_reader<R: Read>(reader: R, path: &str) -> Result<Self, CsvError> {
        let mut m = IpAsMap::new();
        csvio::for_each_row(reader, path, "ip", 2, |_, rec| {
            let ip: Ipv4Addr = rec[0]
                .parse()
                .map_err(|e| format!("bad ip {:?}: {e}", &rec[0]))?;
            let asn: Asn = rec[1]
                .parse()
                .map_err(|e| format!("bad asn {:?}: {e}", &rec[1]))?;
            m.insert(ip, asn);
            Ok(())
        })?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, CsvError> {
        Self::from_csv_reader(csvio::open(path)?, &path.display().to_string())
    }
}

/// Datasets are consulted in order; the routing table is the last resort.
pub fn map_infra_ip_to_as(ip: Ipv4Addr, datasets: &[IpAsMap], table: &RoutingTable) -> Option<Asn> {
    datasets
        .iter()
        .find_map(|d| d.get(ip))
        .or_else(|| table.lookup(ip))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfraIpRecord {
    pub ip: Ipv4Addr,
    pub countries: CountrySet,
    pub ambiguous: bool,
    pub asn: Option<Asn>,
    pub sources: BTreeSet<String>,
}

/// Geolocates and AS-maps every router IP.
pub fn build_infra_records(
    evidence: &InfraEvidence,
    db: &GeoDbStack,
    datasets: &[IpAsMap],
    table: &RoutingTable,
) -> Vec<InfraIpRecord> {
    evidence
        .iter()
        .map(|(ip, sources)| {
            let loc = geolocate_infra_ip(*ip, sources, db);
            InfraIpRecord {
                ip: *ip,
                countries: loc.countries,
                ambiguous: loc.ambiguous,
                asn: map_infra_ip_to_as(*ip, datasets, table),
                sources: sources.iter().map(|s| s.source.clone()).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IxpParticipant {
    pub asn: Asn,
    pub ixp_id: String,
    pub ixp_country: CountryCode,
}

/// Reads `asn,ixp_id,country_code`. Rows with ambiguous codes are dropped
/// and counted.
pub fn read_ixp_csv<R: Read>(
    reader: R,
    path: &str,
) -> Result<(Vec<IxpParticipant>, usize), CsvError> {
    let mut out = Vec::new();
    let mut ambiguous = 0;
    csvio::for_each_row(reader, path, "asn", 3, |_, rec| {
        let asn: Asn = rec[0]
            .parse()
            .map_err(|e| format!("bad asn {:?}: {e}", &rec[0]))?;
        match parse_country(&rec[2]).map_err(|e| e.to_string())? {
            CountryEvidence::Country(c) => out.push(IxpParticipant {
                asn,
                ixp_id: rec[1].to_string(),
                ixp_country: c,
            }),
            CountryEvidence::Ambiguous => ambiguous += 1,
        }
        Ok(())
    })?;
    out.sort();
    out.dedup();
    Ok((out, ambiguous))
}

pub fn load_ixp(path: &Path) -> Result<(Vec<IxpParticipant>, usize), CsvError> {
    read_ixp_csv(csvio::open(path)?, &path.display().to_string())
}
