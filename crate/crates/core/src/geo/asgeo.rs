//! AS-to-country map: the union of prefix, infrastructure and IXP evidence,
//! each country tagged with the sources that support it.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::infra::{InfraIpRecord, IxpParticipant};
use super::ipdb::Located;
use crate::types::{Asn, CountryCode, CountrySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceTag {
    Prefix,
    Infra,
    Ixp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsGeoEntry {
    countries: CountrySet,
    provenance: BTreeMap<CountryCode, BTreeSet<EvidenceTag>>,
    /// Some evidence for this AS was an ambiguous pseudo-code.
    ambiguous: bool,
}

impl AsGeoEntry {
    pub fn countries(&self) -> &CountrySet {
        &self.countries
    }

    pub fn provenance(&self) -> &BTreeMap<CountryCode, BTreeSet<EvidenceTag>> {
        &self.provenance
    }

    pub fn ambiguous(&self) -> bool {
        self.ambiguous
    }

    /// Only ambiguous evidence: the AS has no usable location.
    pub fn ambiguous_only(&self) -> bool {
        self.ambiguous && self.countries.is_empty()
    }

    fn add(&mut self, tag: EvidenceTag, loc: &Located) {
        for c in loc.countries.iter() {
            self.countries.insert(c);
            self.provenance.entry(c).or_default().insert(tag);
        }
        self.ambiguous |= loc.ambiguous;
    }

    fn absorb(&mut self, other: &AsGeoEntry) {
        self.countries.extend(&other.countries);
        for (c, tags) in &other.provenance {
            self.provenance
                .entry(*c)
                .or_default()
                .extend(tags.iter().copied());
        }
        self.ambiguous |= other.ambiguous;
    }
}

/// Geolocation as seen by the detector for a single hop.
#[derive(Debug, Clone, Copy)]
pub struct HopGeo<'a> {
    pub countries: &'a CountrySet,
    /// Set is empty because every piece of evidence was ambiguous.
    pub ambiguous_only: bool,
}

static UNKNOWN: CountrySet = CountrySet::EMPTY;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsGeoMap {
    entries: BTreeMap<Asn, AsGeoEntry>,
    skipped_reserved: u64,
}

impl AsGeoMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records evidence; reserved ASNs are never located.
    pub fn add(&mut self, asn: Asn, tag: EvidenceTag, loc: &Located) {
        if asn.is_reserved() {
            self.skipped_reserved += 1;
            return;
        }
        self.entries.entry(asn).or_default().add(tag, loc);
    }

    /// Registers an AS with no evidence yet.
    pub fn touch(&mut self, asn: Asn) {
        if !asn.is_reserved() {
            self.entries.entry(asn).or_default();
        }
    }

    pub fn get(&self, asn: Asn) -> Option<&AsGeoEntry> {
        self.entries.get(&asn)
    }

    /// Countries of an AS; empty when unknown, reserved or the AS_SET marker.
    pub fn countries(&self, asn: Asn) -> &CountrySet {
        self.entries
            .get(&asn)
            .map(|e| &e.countries)
            .unwrap_or(&UNKNOWN)
    }

    pub fn hop(&self, asn: Asn) -> HopGeo<'_> {
        match self.entries.get(&asn) {
            Some(e) => HopGeo {
                countries: &e.countries,
                ambiguous_only: e.ambiguous_only(),
            },
            None => HopGeo {
                countries: &UNKNOWN,
                ambiguous_only: false,
            },
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Asn, &AsGeoEntry)> {
        self.entries.iter().map(|(a, e)| (*a, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn skipped_reserved(&self) -> u64 {
        self.skipped_reserved
    }

    /// Per-AS union of two maps.
    pub fn merge(&mut self, other: &AsGeoMap) {
        for (asn, e) in &other.entries {
            self.entries.entry(*asn).or_default().absorb(e);
        }
        self.skipped_reserved += other.skipped_reserved;
    }

    pub fn stats(&self) -> GeoStats {
        GeoStats::of(self)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (asn, e) in &self.entries {
            let line = AsGeoLine {
                asn: *asn,
                countries: e.countries.clone(),
                provenance: e.provenance.clone(),
                ambiguous: e.ambiguous,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R, path: &str) -> Result<Self, GeoMapError> {
        let mut map = AsGeoMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| GeoMapError::Io {
                path: path.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: AsGeoLine = serde_json::from_str(&line).map_err(|e| GeoMapError::Line {
                path: path.to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            let derived: CountrySet = parsed.provenance.keys().copied().collect();
            if derived != parsed.countries {
                return Err(GeoMapError::Line {
                    path: path.to_string(),
                    line: i + 1,
                    reason: "countries differ from provenance keys".into(),
                });
            }
            map.entries.insert(
                parsed.asn,
                AsGeoEntry {
                    countries: parsed.countries,
                    provenance: parsed.provenance,
                    ambiguous: parsed.ambiguous,
                },
            );
        }
        Ok(map)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeoMapError {
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

#[derive(Debug, Serialize, Deserialize)]
struct AsGeoLine {
    asn: Asn,
    countries: CountrySet,
    provenance: BTreeMap<CountryCode, BTreeSet<EvidenceTag>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    ambiguous: bool,
}

/// Merges the three evidence streams into one map. Every AS that appears in
/// any input is present, possibly with an empty set.
pub fn build_as_geo(
    prefix_geo: impl IntoIterator<Item = (Asn, Located)>,
    infra: &[InfraIpRecord],
    ixp: &[IxpParticipant],
) -> AsGeoMap {
    let mut map = AsGeoMap::new();
    for (asn, loc) in prefix_geo {
        map.touch(asn);
        map.add(asn, EvidenceTag::Prefix, &loc);
    }
    for r in infra {
        if let Some(asn) = r.asn {
            map.touch(asn);
            map.add(
                asn,
                EvidenceTag::Infra,
                &Located {
                    countries: r.countries.clone(),
                    ambiguous: r.ambiguous,
                },
            );
        }
    }
    for p in ixp {
        map.touch(p.asn);
        map.add(
            p.asn,
            EvidenceTag::Ixp,
            &Located {
                countries: CountrySet::single(p.ixp_country),
                ambiguous: false,
            },
        );
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub countries: usize,
    pub as_count: usize,
    pub cumulative_fraction: f64,
}

/// Summary of a map: how many ASes span several countries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoStats {
    pub as_count: usize,
    pub geolocated: usize,
    pub unknown: usize,
    pub multi_country: usize,
    /// Share of geolocated ASes with more than one country.
    pub multi_country_fraction: f64,
    /// Mean set size among multi-country ASes.
    pub mean_multi_country_size: f64,
    /// Distribution of countries-per-AS over geolocated ASes.
    pub cdf: Vec<CdfPoint>,
}

impl GeoStats {
    fn of(map: &AsGeoMap) -> GeoStats {
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        let mut unknown = 0;
        for e in map.entries.values() {
            match e.countries.len() {
                0 => unknown += 1,
                n => *hist.entry(n).or_default() += 1,
            }
        }
        let geolocated: usize = hist.values().sum();
        let multi: Vec<(usize, usize)> = hist
            .iter()
            .filter(|(k, _)| **k > 1)
            .map(|(k, v)| (*k, *v))
            .collect();
        let multi_country: usize = multi.iter().map(|(_, v)| v).sum();
        let multi_sizes: usize = multi.iter().map(|(k, v)| k * v).sum();
        let mut acc = 0;
        let cdf = hist
            .iter()
            .map(|(k, v)| {
                acc += v;
                CdfPoint {
                    countries: *k,
                    as_count: *v,
                    cumulative_fraction: acc as f64 / geolocated as f64,
                }
            })
            .collect();
        GeoStats {
            as_count: map.entries.len(),
            geolocated,
            unknown,
            multi_country,
            multi_country_fraction: if geolocated == 0 {
                0.0
            } else {
                multi_country as f64 / geolocated as f64
            },
            mean_multi_country_size: if multi_country == 0 {
                0.0
            } else {
                multi_sizes as f64 / multi_country as f64
            },
            cdf,
        }
    }
}
