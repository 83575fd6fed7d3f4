//! Seeded synthetic bundles with planted detours and their ground truth.
//!
//! A bundle is a directory holding RIB snapshots in MRT (raw and gzip) and
//! text form, the geolocation inputs, AS relationships, traceroutes, a run
//! configuration and `manifest.json` with everything a run should find.

pub mod mrt_writer;
pub mod oracle;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::detect::DetourKey;
use crate::ingest::{PathSegment, RouteRecord, EPOCH_SECONDS};
use crate::types::{Asn, CountryCode, CountrySet};
use crate::validate::{write_traceroutes, Mutation, ValidationSummary};

use mrt_writer::{write_rib, write_rib_gz, MrtRoute};
pub use scenario::{
    build_plan, longest_run, Plan, Plant, PlantClass, PlantShape, Scenario, TraceKind,
    RNG_ALGORITHM,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const TRANSIENT_EPOCHS: u32 = 9;

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("plant {plant} cannot be realized: {reason}")]
    Unrealizable { plant: usize, reason: String },
    #[error("internal fixture error: {0}")]
    Internal(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedDetour {
    pub key: DetourKey,
    pub peer_asn: Asn,
    pub home_country: CountryCode,
    pub epochs: Vec<u32>,
    pub class: PlantClass,
    pub shape: PlantShape,
    pub transient: bool,
    pub flash: bool,
    pub detour_origin_asn: Asn,
    pub detour_destination_asns: Vec<Asn>,
    pub detour_destination_countries: CountrySet,
    pub detour_return_asn: Asn,
    pub repeat_departure: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedPeer {
    pub ip: IpAddr,
    pub asn: Asn,
    pub country: CountryCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Detours that survive the peering filter, sorted by key.
    pub detours: Vec<ExpectedDetour>,
    /// Detours the peering filter removes, sorted by key.
    pub filtered: Vec<ExpectedDetour>,
    pub detoured_entries: u64,
    pub detoured_entries_before_filter: u64,
    pub peers: Vec<ExpectedPeer>,
    pub per_country_raw: BTreeMap<CountryCode, f64>,
    pub per_country_dedup: BTreeMap<CountryCode, f64>,
    pub validation: ValidationSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub rng: String,
    pub seed: u64,
    pub scenario: Scenario,
    pub window_start: u64,
    pub window_end: u64,
    pub epochs: u32,
    pub config: String,
    pub ribs: Vec<String>,
    pub files: Vec<String>,
    pub truth: GroundTruth,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| FixtureError::Internal(e.to_string()))
    }
}

/// Builds the plan for `scenario` and writes it to `dir`.
pub fn generate(scenario: &Scenario, dir: &Path) -> Result<Manifest, FixtureError> {
    let plan = build_plan(scenario)?;
    write_bundle(&plan, dir)
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FixtureError + '_ {
    move |source| FixtureError::Io {
        path: path.display().to_string(),
        source,
    }
}

struct Out<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Out<'_> {
    fn write(
        &mut self,
        rel: &str,
        body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
    ) -> Result<(), FixtureError> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        body(&mut w)
            .and_then(|_| w.flush())
            .map_err(io_err(&path))?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

fn expected(plan: &Plan) -> GroundTruth {
    let mut detours = Vec::new();
    let mut filtered = Vec::new();
    for pl in &plan.plants {
        for &pi in &pl.peers {
            let peer = &plan.peers[pi];
            let dest: Vec<Asn> = pl.path[pl.origin + 1..pl.ret].to_vec();
            let mut dest_c = CountrySet::new();
            for a in &dest {
                dest_c.extend(&plan.ases[a].truth);
            }
            let repeat = pl.path[pl.ret + 1..].iter().any(|a| {
                let t = &plan
                    .ases
                    .get(a)
                    .map(|i| i.truth.clone())
                    .unwrap_or_default();
                !t.is_empty() && !t.contains(pl.home)
            });
            let e = ExpectedDetour {
                key: DetourKey {
                    peer_ip: peer.ip,
                    prefix: pl.prefix,
                    as_path: pl.path.clone(),
                },
                peer_asn: peer.asn,
                home_country: pl.home,
                epochs: pl.epochs.iter().copied().collect(),
                class: pl.class,
                shape: pl.shape,
                transient: longest_run(&pl.epochs) <= TRANSIENT_EPOCHS,
                flash: pl.epochs.len() == 1 && pl.peers.len() == 1,
                detour_origin_asn: pl.path[pl.origin],
                detour_destination_asns: dest,
                detour_destination_countries: dest_c,
                detour_return_asn: pl.path[pl.ret],
                repeat_departure: repeat,
            };
            if pl.expect_filtered {
                filtered.push(e);
            } else {
                detours.push(e);
            }
        }
    }
    detours.sort_by(|a, b| a.key.cmp(&b.key));
    filtered.sort_by(|a, b| a.key.cmp(&b.key));
    let kept: u64 = detours.iter().map(|d| d.epochs.len() as u64).sum();
    let dropped: u64 = filtered.iter().map(|d| d.epochs.len() as u64).sum();

    // per-peer key counts, then plain and one-peer-per-AS means
    let mut per_peer: BTreeMap<IpAddr, u64> = plan.peers.iter().map(|p| (p.ip, 0)).collect();
    for d in &detours {
        *per_peer.get_mut(&d.key.peer_ip).unwrap() += 1;
    }
    let mut raw: BTreeMap<CountryCode, Vec<u64>> = BTreeMap::new();
    let mut best: BTreeMap<Asn, (u64, IpAddr, CountryCode)> = BTreeMap::new();
    for p in &plan.peers {
        let n = per_peer[&p.ip];
        raw.entry(p.country).or_default().push(n);
        let replace = match best.get(&p.asn) {
            None => true,
            Some((bn, bip, _)) => n > *bn || (n == *bn && p.ip < *bip),
        };
        if replace {
            best.insert(p.asn, (n, p.ip, p.country));
        }
    }
    let mut dedup: BTreeMap<CountryCode, Vec<u64>> = BTreeMap::new();
    for (n, _, c) in best.values() {
        dedup.entry(*c).or_default().push(*n);
    }
    let mean = |m: BTreeMap<CountryCode, Vec<u64>>| {
        m.into_iter()
            .map(|(c, v)| (c, v.iter().sum::<u64>() as f64 / v.len() as f64))
            .collect::<BTreeMap<_, _>>()
    };

    let mut validation = ValidationSummary::default();
    for t in &plan.traces {
        validation.pairs += 1;
        let (usable, congruent, country, rtt, mutation) = match t.kind {
            TraceKind::Full => (true, true, true, true, Mutation::Exact),
            TraceKind::NoRtt => (true, true, true, false, Mutation::Exact),
            TraceKind::NoCountry => (true, true, false, true, Mutation::Exact),
            TraceKind::Incongruent => (true, false, false, false, Mutation::Incongruent),
            TraceKind::Short => (false, false, false, false, Mutation::Incongruent),
            TraceKind::Inserted => (true, true, true, true, Mutation::Insertion),
        };
        if usable {
            validation.usable += 1;
            validation.congruent += congruent as u64;
            validation.country_wise += country as u64;
            validation.rtt_wise += rtt as u64;
            validation.both += (country && rtt) as u64;
            *validation.mutations.entry(mutation).or_default() += 1;
        }
    }

    GroundTruth {
        detours,
        filtered,
        detoured_entries: kept,
        detoured_entries_before_filter: kept + dropped,
        peers: plan
            .peers
            .iter()
            .map(|p| ExpectedPeer {
                ip: p.ip,
                asn: p.asn,
                country: p.country,
            })
            .collect(),
        per_country_raw: mean(raw),
        per_country_dedup: mean(dedup),
        validation,
    }
}

/// Routes of one collector at one epoch.
fn routes_for(
    plan: &Plan,
    collector: usize,
    epoch: u32,
    plants: &HashMap<(usize, Ipv4Net), Vec<usize>>,
    overrides: &HashMap<(usize, Ipv4Net), Vec<&scenario::PathOverride>>,
    time: u64,
    extra: Option<&scenario::PathOverride>,
) -> Vec<RouteRecord> {
    let mut out = Vec::new();
    for (pi, peer) in plan.peers.iter().enumerate() {
        if peer.collector != collector {
            continue;
        }
        for pre in &plan.prefixes {
            let key = (pi, pre.prefix);
            let planted = plants.get(&key).and_then(|v| {
                v.iter()
                    .map(|i| &plan.plants[*i])
                    .find(|pl| pl.epochs.contains(&epoch))
                    .map(|pl| pl.path.clone())
            });
            let special = extra
                .filter(|o| o.peer == pi && o.prefix == pre.prefix)
                .map(|o| o.path.clone());
            let over = || {
                overrides.get(&key).and_then(|v| {
                    v.iter()
                        .find(|o| o.epochs.is_empty() || o.epochs.contains(&epoch))
                        .map(|o| o.path.clone())
                })
            };
            let path = special
                .or(planted)
                .or_else(over)
                .unwrap_or_else(|| plan.baseline_path(pi, pre));
            out.push(RouteRecord {
                peer_ip: peer.ip,
                peer_asn: peer.asn,
                prefix: pre.prefix,
                origin_asn: *path.last().unwrap(),
                as_path: path,
                epoch,
                snapshot_time: time,
            });
        }
    }
    out
}

fn prepended(r: &RouteRecord) -> bool {
    let x = u32::from(r.prefix.network()) >> 8;
    (x ^ r.peer_asn.0).is_multiple_of(5)
}

fn write_text_rib(w: &mut dyn Write, records: &[RouteRecord]) -> io::Result<()> {
    writeln!(w, "# snapshot_time|peer_ip|peer_asn|prefix|as_path")?;
    for r in records {
        let mut path: Vec<String> = r
            .as_path
            .iter()
            .map(|a| {
                if a.is_as_set() {
                    "{}".into()
                } else {
                    a.to_string()
                }
            })
            .collect();
        if prepended(r) {
            path.insert(0, r.peer_asn.to_string());
        }
        writeln!(
            w,
            "{}|{}|{}|{}|{}",
            r.snapshot_time,
            r.peer_ip,
            r.peer_asn,
            r.prefix,
            path.join(" ")
        )?;
    }
    Ok(())
}

fn mrt_routes(records: &[RouteRecord]) -> Vec<MrtRoute> {
    records
        .iter()
        .map(|r| {
            let mut m = MrtRoute::from_record(r);
            if prepended(r) {
                if let Some(PathSegment::Sequence(s)) = m.segments.first_mut() {
                    s.insert(0, r.peer_asn);
                }
            }
            m
        })
        .collect()
}

#[derive(Clone, Copy)]
enum RibFormat {
    MrtGz,
    Mrt,
    Text,
}

fn write_snapshot(
    out: &mut Out<'_>,
    name: &str,
    format: RibFormat,
    time: u64,
    records: &[RouteRecord],
) -> Result<String, FixtureError> {
    let ts = time as u32;
    let rel = match format {
        RibFormat::MrtGz => format!("ribs/{name}.mrt.gz"),
        RibFormat::Mrt => format!("ribs/{name}.mrt"),
        RibFormat::Text => format!("ribs/{name}.txt"),
    };
    match format {
        RibFormat::MrtGz => out.write(&rel, |w| write_rib_gz(w, ts, &mrt_routes(records)))?,
        RibFormat::Mrt => out.write(&rel, |w| write_rib(w, ts, &mrt_routes(records)))?,
        RibFormat::Text => out.write(&rel, |w| write_text_rib(w, records))?,
    }
    Ok(rel)
}

/// Writes every bundle file under `dir` and returns the manifest, which is
/// also saved as `manifest.json`.
pub fn write_bundle(plan: &Plan, dir: &Path) -> Result<Manifest, FixtureError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let sc = &plan.scenario;
    let mut out = Out {
        dir,
        files: Vec::new(),
    };

    let mut plants: HashMap<(usize, Ipv4Net), Vec<usize>> = HashMap::new();
    for (i, pl) in plan.plants.iter().enumerate() {
        for &p in &pl.peers {
            plants.entry((p, pl.prefix)).or_default().push(i);
        }
    }
    let overrides = scenario::override_index(plan);

    let mut ribs = Vec::new();
    for epoch in 0..sc.epochs {
        let epoch_start = sc.window_start + epoch as u64 * EPOCH_SECONDS;
        for c in 0..sc.collectors {
            if let Some((sc_c, sc_e, o)) = &plan.superseded {
                if *sc_c == c && *sc_e == epoch {
                    let t = epoch_start + 60 + c as u64;
                    let recs = routes_for(plan, c, epoch, &plants, &overrides, t, Some(o));
                    let name = format!("rib.c{c}.e{epoch:03}.early");
                    ribs.push(write_snapshot(&mut out, &name, RibFormat::Text, t, &recs)?);
                }
            }
            let t = epoch_start + 7200 + 60 * c as u64;
            let recs = routes_for(plan, c, epoch, &plants, &overrides, t, None);
            let format = match (epoch as usize + c) % 3 {
                0 => RibFormat::MrtGz,
                1 => RibFormat::Mrt,
                _ => RibFormat::Text,
            };
            let name = format!("rib.c{c}.e{epoch:03}");
            ribs.push(write_snapshot(&mut out, &name, format, t, &recs)?);
        }
    }

    let ranges = |rows: &[(std::net::Ipv4Addr, std::net::Ipv4Addr, String)]| {
        let rows = rows.to_vec();
        move |w: &mut dyn Write| -> io::Result<()> {
            writeln!(w, "range_start_ip,range_end_ip,country_code")?;
            for (a, b, c) in &rows {
                writeln!(w, "{a},{b},{c}")?;
            }
            Ok(())
        }
    };
    out.write("geo/ip_country.csv", ranges(&plan.primary_db))?;
    out.write("geo/ip_country_fallback.csv", ranges(&plan.fallback_db))?;
    out.write("geo/infra_ips.csv", |w| {
        writeln!(w, "ip,source,country,confidence")?;
        for r in &plan.infra {
            let conf = r.confidence.map(|c| format!("{c:.2}")).unwrap_or_default();
            writeln!(w, "{},{},{},{}", r.ip, r.source, r.country, conf)?;
        }
        Ok(())
    })?;
    out.write("geo/ip_to_as.csv", |w| {
        writeln!(w, "ip,asn")?;
        for (ip, a) in &plan.ip_to_as {
            writeln!(w, "{ip},{a}")?;
        }
        Ok(())
    })?;
    out.write("geo/ixp_participants.csv", |w| {
        writeln!(w, "asn,ixp_id,country_code")?;
        for (a, id, c) in &plan.ixp {
            writeln!(w, "{a},{id},{c}")?;
        }
        Ok(())
    })?;
    out.write("as_rel.txt", |w| {
        writeln!(w, "# a|b|relation: -1 a is provider of b, 0 peers")?;
        let mut seen = BTreeSet::new();
        for (a, b, rel) in &plan.relations {
            use crate::detect::Relation;
            let line = match rel {
                Relation::P2c => format!("{a}|{b}|-1"),
                Relation::C2p => format!("{b}|{a}|-1"),
                Relation::P2p => format!("{a}|{b}|0"),
            };
            if seen.insert(line.clone()) {
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    })?;
    let traces: Vec<_> = plan.traces.iter().map(|t| t.result.clone()).collect();
    out.write("traceroutes.jsonl", |w| write_traceroutes(w, &traces))?;

    let window_end = sc.window_start + sc.epochs as u64 * EPOCH_SECONDS;
    let min_days = if sc.epochs as u64 * EPOCH_SECONDS >= 15 * 86_400 {
        15
    } else {
        1
    };
    out.write("bundle.conf", |w| {
        writeln!(w, "# synthetic bundle, seed {}", sc.seed)?;
        writeln!(w, "window_start = {}", sc.window_start)?;
        writeln!(w, "window_end = {window_end}")?;
        writeln!(w, "rib_dir = ribs")?;
        writeln!(w, "ip_country_db = geo/ip_country.csv")?;
        writeln!(w, "fallback_db = geo/ip_country_fallback.csv")?;
        writeln!(w, "infra_ips = geo/infra_ips.csv")?;
        writeln!(w, "ip_to_as = geo/ip_to_as.csv")?;
        writeln!(w, "ixp = geo/ixp_participants.csv")?;
        writeln!(w, "as_rel = as_rel.txt")?;
        writeln!(w, "traceroutes = traceroutes.jsonl")?;
        writeln!(w, "min_ownership_days = {min_days}")?;
        writeln!(w, "output_dir = out")?;
        Ok(())
    })?;

    let mut manifest = Manifest {
        format_version: MANIFEST_VERSION,
        rng: RNG_ALGORITHM.to_string(),
        seed: sc.seed,
        scenario: sc.clone(),
        window_start: sc.window_start,
        window_end,
        epochs: sc.epochs,
        config: "bundle.conf".into(),
        ribs,
        files: Vec::new(),
        truth: expected(plan),
    };
    let mut files = out.files.clone();
    files.push("manifest.json".into());
    manifest.files = files;
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| FixtureError::Internal(e.to_string()))?;
    out.write("manifest.json", |w| w.write_all(text.as_bytes()))?;
    Ok(manifest)
}

/// Path of the bundle's run configuration.
pub fn config_path(dir: &Path, manifest: &Manifest) -> PathBuf {
    dir.join(&manifest.config)
}
