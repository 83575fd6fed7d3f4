//! Range-based IP-to-country database.

use std::io::Read;
use std::net::Ipv4Addr;
use std::path::Path;

use ipnet::Ipv4Net;

use crate::csvio::{self, CsvError};
use crate::types::{parse_country, CountryCode, CountryEvidence, CountrySet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IpRange {
    pub start: u32,
    pub end: u32,
    pub answer: CountryEvidence,
}

/// Countries found for an address or interval, plus whether any of the
/// answers were ambiguous pseudo-codes (which never enter the set).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Located {
    pub countries: CountrySet,
    pub ambiguous: bool,
}

impl Located {
    pub fn absorb(&mut self, other: &Located) {
        self.countries.extend(&other.countries);
        self.ambiguous |= other.ambiguous;
    }

    fn add(&mut self, answer: CountryEvidence) {
        match answer {
            CountryEvidence::Country(c) => {
                self.countries.insert(c);
            }
            CountryEvidence::Ambiguous => self.ambiguous = true,
        }
    }
}

/// Sorted, non-overlapping inclusive ranges. Lookups are total: a miss is
/// simply an empty answer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IpCountryDb {
    ranges: Vec<IpRange>,
}

#[derive(Debug, thiserror::Error)]
pub enum IpDbError {
    #[error("range {start}-{end} is inverted")]
    Inverted { start: Ipv4Addr, end: Ipv4Addr },
    #[error("range starting at {start} overlaps the previous range")]
    Overlap { start: Ipv4Addr },
}

impl IpCountryDb {
    /// Sorts and validates ranges.
    pub fn new(mut ranges: Vec<IpRange>) -> Result<Self, IpDbError> {
        for r in &ranges {
            if r.start > r.end {
                return Err(IpDbError::Inverted {
                    start: r.start.into(),
                    end: r.end.into(),
                });
            }
        }
        ranges.sort_by_key(|r| (r.start, r.end));
        for w in ranges.windows(2) {
            if w[1].start <= w[0].end {
                return Err(IpDbError::Overlap {
                    start: w[1].start.into(),
                });
            }
        }
        Ok(IpCountryDb { ranges })
    }

    pub fn ranges(&self) -> &[IpRange] {
        &self.ranges
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn lookup(&self, ip: Ipv4Addr) -> Option<CountryEvidence> {
        let x = u32::from(ip);
        let i = self.ranges.partition_point(|r| r.end < x);
        self.ranges
            .get(i)
            .filter(|r| r.start <= x)
            .map(|r| r.answer)
    }

    /// Concrete country for an address, ignoring ambiguous answers.
    pub fn country(&self, ip: Ipv4Addr) -> Option<CountryCode> {
        match self.lookup(ip) {
            Some(CountryEvidence::Country(c)) => Some(c),
            _ => None,
        }
    }

    /// Union of answers of every range intersecting `[lo, hi]`, and the
    /// sub-intervals no range covers.
    pub fn locate_interval(&self, lo: u32, hi: u32) -> (Located, Vec<(u32, u32)>) {
        let mut out = Located::default();
        let mut gaps = Vec::new();
        let mut cursor = lo as u64;
        let mut i = self.ranges.partition_point(|r| r.end < lo);
        while let Some(r) = self.ranges.get(i) {
            if r.start > hi {
                break;
            }
            if (r.start as u64) > cursor {
                gaps.push((cursor as u32, r.start - 1));
            }
            out.add(r.answer);
            cursor = r.end as u64 + 1;
            i += 1;
        }
        if cursor <= hi as u64 {
            gaps.push((cursor as u32, hi));
        }
        (out, gaps)
    }

    pub fn from_csv_reader<R: Read>(reader: R, path: &str) -> Result<Self, CsvError> {
        let mut ranges = Vec::new();
        csvio::for_each_row(reader, path, "range_start_ip", 3, |_, rec| {
            let start: Ipv4Addr = rec[0]
                .parse()
                .map_err(|e| format!("bad range start {:?}: {e}", &rec[0]))?;
            let end: Ipv4Addr = rec[1]
                .parse()
                .map_err(|e| format!("bad range end {:?}: {e}", &rec[1]))?;
            let answer = parse_country(&rec[2]).map_err(|e| e.to_string())?;
            if start > end {
                return Err(format!("range {start}-{end} is inverted"));
            }
            ranges.push(IpRange {
                start: start.into(),
                end: end.into(),
                answer,
            });
            Ok(())
        })?;
        IpCountryDb::new(ranges).map_err(|e| CsvError::Row {
            path: path.to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CsvError> {
        Self::from_csv_reader(csvio::open(path)?, &path.display().to_string())
    }
}

fn prefix_bounds(prefix: Ipv4Net) -> (u32, u32) {
    (u32::from(prefix.network()), u32::from(prefix.broadcast()))
}

/// Countries of every range overlapping the prefix's address block.
pub fn geolocate_prefix(prefix: Ipv4Net, db: &IpCountryDb) -> CountrySet {
    let (lo, hi) = prefix_bounds(prefix);
    db.locate_interval(lo, hi).0.countries
}

/// A primary database plus an optional fallback consulted only for
/// addresses the primary does not cover.
#[derive(Debug, Clone, Default)]
pub struct GeoDbStack {
    pub primary: IpCountryDb,
    pub fallback: Option<IpCountryDb>,
}

impl GeoDbStack {
    pub fn new(primary: IpCountryDb, fallback: Option<IpCountryDb>) -> Self {
        GeoDbStack { primary, fallback }
    }

    pub fn locate_interval(&self, lo: u32, hi: u32) -> Located {
        let (mut out, gaps) = self.primary.locate_interval(lo, hi);
        if let Some(fb) = &self.fallback {
            for (glo, ghi) in gaps {
                out.absorb(&fb.locate_interval(glo, ghi).0);
            }
        }
        out
    }

    pub fn locate_prefix(&self, prefix: Ipv4Net) -> Located {
        let (lo, hi) = prefix_bounds(prefix);
        self.locate_interval(lo, hi)
    }

    pub fn locate_ip(&self, ip: Ipv4Addr) -> Located {
        let x = u32::from(ip);
        self.locate_interval(x, x)
    }

    pub fn country(&self, ip: Ipv4Addr) -> Option<CountryCode> {
        match self.primary.lookup(ip) {
            Some(CountryEvidence::Country(c)) => Some(c),
            Some(CountryEvidence::Ambiguous) => None,
            None => self.fallback.as_ref().and_then(|f| f.country(ip)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::countries;

    fn range(a: &str, b: &str, c: &str) -> IpRange {
        IpRange {
            start: a.parse::<Ipv4Addr>().unwrap().into(),
            end: b.parse::<Ipv4Addr>().unwrap().into(),
            answer: parse_country(c).unwrap(),
        }
    }

    fn db() -> IpCountryDb {
        IpCountryDb::new(vec![
            range("10.0.1.0", "10.0.1.255", "BR"),
            range("10.0.0.0", "10.0.0.255", "US"),
            range("10.0.4.0", "10.0.4.127", "EU"),
            range("10.0.4.128", "10.0.4.255", "DE"),
        ])
        .unwrap()
    }

    #[test]
    fn inside_one_range() {
        assert_eq!(
            geolocate_prefix("10.0.0.0/24".parse().unwrap(), &db()),
            countries(&["US"])
        );
    }

    #[test]
    fn straddling_two_ranges() {
        assert_eq!(
            geolocate_prefix("10.0.0.0/23".parse().unwrap(), &db()),
            countries(&["US", "BR"])
        );
    }

    #[test]
    fn no_overlap_is_empty() {
        assert!(geolocate_prefix("10.0.2.0/24".parse().unwrap(), &db()).is_empty());
    }

    #[test]
    fn ambiguous_codes_never_enter_sets() {
        let d = db();
        let (loc, gaps) = d.locate_interval(
            u32::from("10.0.4.0".parse::<Ipv4Addr>().unwrap()),
            u32::from("10.0.4.255".parse::<Ipv4Addr>().unwrap()),
        );
        assert_eq!(loc.countries, countries(&["DE"]));
        assert!(loc.ambiguous);
        assert!(gaps.is_empty());
    }

    #[test]
    fn overlap_rejected() {
        let err = IpCountryDb::new(vec![
            range("10.0.0.0", "10.0.0.255", "US"),
            range("10.0.0.128", "10.0.1.0", "BR"),
        ]);
        assert!(matches!(err, Err(IpDbError::Overlap { .. })));
    }

    #[test]
    fn fallback_only_fills_gaps() {
        let fallback = IpCountryDb::new(vec![range("10.0.0.0", "10.0.3.255", "JP")]).unwrap();
        let stack = GeoDbStack::new(db(), Some(fallback));
        assert_eq!(
            stack
                .locate_prefix("10.0.0.0/23".parse().unwrap())
                .countries,
            countries(&["US", "BR"])
        );
        assert_eq!(
            stack
                .locate_prefix("10.0.0.0/22".parse().unwrap())
                .countries,
            countries(&["US", "BR", "JP"])
        );
        assert_eq!(
            stack.country("10.0.2.9".parse().unwrap()),
            Some(CountryCode::must("JP"))
        );
    }

    #[test]
    fn csv_with_header_and_comments() {
        let text = "range_start_ip,range_end_ip,country_code\n# c\n1.0.0.0,1.0.0.255,au\n";
        let d = IpCountryDb::from_csv_reader(text.as_bytes(), "t").unwrap();
        assert_eq!(
            d.country("1.0.0.7".parse().unwrap()),
            Some(CountryCode::must("AU"))
        );
        let bad = "1.0.0.0,1.0.0.255,Australia\n";
        assert!(matches!(
            IpCountryDb::from_csv_reader(bad.as_bytes(), "t"),
            Err(CsvError::Row { line: 1, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Per-address union, independent of the interval walk.
        fn brute_force(prefix: Ipv4Net, ranges: &[IpRange]) -> CountrySet {
            let mut out = CountrySet::new();
            let lo = u32::from(prefix.network());
            let hi = u32::from(prefix.broadcast());
            for ip in lo..=hi {
                for r in ranges {
                    if r.start <= ip && ip <= r.end {
                        if let CountryEvidence::Country(c) = r.answer {
                            out.insert(c);
                        }
                    }
                }
            }
            out
        }

        fn arb_db() -> impl Strategy<Value = IpCountryDb> {
            proptest::collection::vec((0u32..4096, 1u32..300, 0usize..6), 0..60).prop_map(|cuts| {
                let codes = ["US", "BR", "DE", "JP", "EU", "IN"];
                let mut ranges = Vec::new();
                let mut at = 0x0a00_0000u32;
                for (gap, len, ci) in cuts {
                    let start = at + gap;
                    let end = start + len - 1;
                    ranges.push(IpRange {
                        start,
                        end,
                        answer: parse_country(codes[ci]).unwrap(),
                    });
                    at = end + 1;
                }
                IpCountryDb::new(ranges).unwrap()
            })
        }

        proptest! {
            #[test]
            fn interval_equals_per_address(db in arb_db(), off in 0u32..40_000, len in 20u8..=28) {
                let net = Ipv4Net::new(Ipv4Addr::from(0x0a00_0000u32 + off), len).unwrap().trunc();
                prop_assert_eq!(geolocate_prefix(net, &db), brute_force(net, db.ranges()));
            }
        }
    }
}
