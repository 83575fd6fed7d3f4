//! End-to-end stages over files: geolocation, detection, dynamics and
//! validation. Each stage writes its outputs to the run's output directory
//! and later stages can start from those files.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::RunConfig;

use crate::csvio::CsvError;
use crate::detect::{
    write_verdicts_jsonl, DetectCounters, DetectOptions, DetectRun, DetourRecord, Outcome,
    RelationshipDb, RelationshipError,
};
use crate::dynamics::tables::render_table_text;
use crate::dynamics::{
    build_timelines, score_timelines, write_metrics_csv, DynamicsReport, ScoredTimeline,
};
use crate::geo::{
    build_as_geo, build_infra_records, load_infra, load_ixp, utc_day, AsGeoMap, GeoDbStack,
    GeoMapError, GeoStats, IpAsMap, IpCountryDb, OwnershipAccumulator, OwnershipSplit,
    RoutingTable,
};
use crate::ingest::{
    epoch_of, parse_mrt, parse_text_rib, plan_latest_per_peer_epoch, scan_mrt_peers,
    scan_text_peers, IngestError, PeerId, RibSnapshot, SnapshotSummary,
};
use crate::types::{Asn, CountryCode};
use crate::validate::{
    load_traceroutes, match_traceroutes, validate_all, AsMapper, TracerouteError, ValidateOptions,
    ValidationOutcome, ValidationSummary,
};

pub const AS_GEO_FILE: &str = "as_geo.jsonl";
pub const GEO_STATS_FILE: &str = "geo_stats.json";
pub const GEO_CDF_FILE: &str = "geo_stats.csv";
pub const ROUTING_TABLE_FILE: &str = "routing_table.csv";
pub const OWNERSHIP_TRANSIENTS_FILE: &str = "ownership_transients.csv";
pub const RIB_INVENTORY_FILE: &str = "rib_inventory.csv";
pub const DETOURS_FILE: &str = "detours.jsonl";
pub const FILTERED_FILE: &str = "filtered_detours.jsonl";
pub const DETECT_SUMMARY_FILE: &str = "detect_summary.json";
pub const PEERS_FILE: &str = "peers.csv";
pub const PEERING_REPORT_FILE: &str = "peering_report.txt";
pub const PER_COUNTRY_FILE: &str = "per_country.csv";
pub const METRICS_FILE: &str = "dynamics_metrics.csv";
pub const REPORT_JSON_FILE: &str = "dynamics_report.json";
pub const REPORT_TEXT_FILE: &str = "dynamics_report.txt";
pub const VALIDATION_FILE: &str = "validation.jsonl";
pub const VALIDATION_SUMMARY_FILE: &str = "validation_summary.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    GeoMap(#[from] GeoMapError),
    #[error(transparent)]
    Relationship(#[from] RelationshipError),
    #[error(transparent)]
    Traceroute(#[from] TracerouteError),
    #[error("{0}")]
    Data(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    /// Process exit status: 1 for usage and configuration problems, 2 for
    /// unreadable or malformed inputs, 3 for a broken internal invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Missing(_) => 1,
            PipelineError::Invariant(_) => 3,
            _ => 2,
        }
    }
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_output(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> Result<PathBuf, PipelineError> {
    fs::create_dir_all(dir).map_err(io_at(dir))?;
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).map_err(io_at(&path))?);
    body(&mut w).and_then(|_| w.flush()).map_err(io_at(&path))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, PipelineError> {
    write_output(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")
    })
}

/// Runs `f` on a thread pool of the given size, or the global pool.
pub fn with_jobs<T: Send>(
    jobs: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, PipelineError> {
    match jobs {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| PipelineError::Config(format!("thread pool: {e}"))),
    }
}

fn is_text_rib(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".txt"))
}

/// RIB files named in the configuration, directories expanded, sorted.
pub fn rib_files(cfg: &RunConfig) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out: BTreeSet<PathBuf> = cfg.ribs.iter().cloned().collect();
    for dir in &cfg.rib_dirs {
        for entry in fs::read_dir(dir).map_err(io_at(dir))? {
            let entry = entry.map_err(io_at(dir))?;
            let path = entry.path();
            let hidden = entry.file_name().to_string_lossy().starts_with('.');
            if !hidden && path.is_file() {
                out.insert(path);
            }
        }
    }
    Ok(out.into_iter().collect())
}

/// One RIB file and the peers whose routes it contributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RibFile {
    pub path: PathBuf,
    pub snapshot_time: Option<u64>,
    pub epoch: Option<u32>,
    pub peers: usize,
    pub keep: BTreeSet<PeerId>,
}

/// Reads the peer set of every file and picks, for each peer and epoch, the
/// latest snapshot. Files outside the window contribute nothing.
pub fn plan_ribs(cfg: &RunConfig) -> Result<Vec<RibFile>, PipelineError> {
    let paths = rib_files(cfg)?;
    let scanned: Vec<Result<SnapshotSummary, IngestError>> = paths
        .par_iter()
        .map(|p| {
            if is_text_rib(p) {
                scan_text_peers(p)
            } else {
                scan_mrt_peers(p)
            }
        })
        .collect();
    let mut summaries = Vec::with_capacity(paths.len());
    for s in scanned {
        let mut s = s?;
        if let Some(t) = s.snapshot_time {
            if t < cfg.window_start || t >= cfg.window_end {
                s.snapshot_time = None;
            }
        }
        summaries.push(s);
    }
    let keep = plan_latest_per_peer_epoch(&summaries, cfg.window_start)?;
    Ok(paths
        .into_iter()
        .zip(summaries)
        .zip(keep)
        .map(|((path, s), keep)| RibFile {
            path,
            snapshot_time: s.snapshot_time,
            epoch: s
                .snapshot_time
                .and_then(|t| epoch_of(t, cfg.window_start).ok()),
            peers: s.peers.len(),
            keep,
        })
        .collect())
}

fn parse_kept(
    f: &RibFile,
    cfg: &RunConfig,
) -> Result<(RibSnapshot, Option<String>), PipelineError> {
    let parsed = if is_text_rib(&f.path) {
        parse_text_rib(&f.path, cfg.window_start)
    } else {
        parse_mrt(&f.path, cfg.window_start)
    };
    let (mut snap, warning) = match parsed {
        Ok(s) => (s, None),
        Err(IngestError::Truncated { snapshot, .. }) if !is_text_rib(&f.path) => {
            let w = format!(
                "{}: truncated, kept {} records",
                f.path.display(),
                snapshot.records.len()
            );
            (*snapshot, Some(w))
        }
        Err(e) => return Err(e.into()),
    };
    snap.records.retain(|r| f.keep.contains(&r.peer()));
    Ok((snap, warning))
}

/// Parses every contributing file in parallel and folds each into a `T`;
/// the per-file results are combined in file order.
fn fold_ribs<T: Send>(
    files: &[RibFile],
    cfg: &RunConfig,
    per_file: impl Fn(&RibSnapshot) -> T + Sync,
    combine: impl Fn(T, T) -> T,
    empty: T,
) -> Result<(T, Vec<String>), PipelineError> {
    let parts: Vec<Result<(T, Option<String>), PipelineError>> = files
        .par_iter()
        .filter(|f| !f.keep.is_empty())
        .map(|f| parse_kept(f, cfg).map(|(s, w)| (per_file(&s), w)))
        .collect();
    let mut acc = empty;
    let mut warnings = Vec::new();
    for p in parts {
        let (t, w) = p?;
        acc = combine(acc, t);
        warnings.extend(w);
    }
    Ok((acc, warnings))
}

pub fn load_geo_db(cfg: &RunConfig) -> Result<GeoDbStack, PipelineError> {
    let primary = match &cfg.ip_country_db {
        Some(p) => IpCountryDb::load(p)?,
        None => IpCountryDb::default(),
    };
    let fallback = match &cfg.fallback_db {
        Some(p) => Some(IpCountryDb::load(p)?),
        None => None,
    };
    Ok(GeoDbStack::new(primary, fallback))
}

pub fn load_ip_to_as(cfg: &RunConfig) -> Result<Vec<IpAsMap>, PipelineError> {
    cfg.ip_to_as
        .iter()
        .map(|p| IpAsMap::load(p).map_err(Into::into))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoSummary {
    pub rib_files: usize,
    pub rib_files_used: usize,
    pub owned_prefix_origins: usize,
    pub transient_prefix_origins: usize,
    pub routing_table_prefixes: usize,
    pub infra_ips: usize,
    pub infra_ips_mapped: usize,
    pub ixp_memberships: usize,
    pub ixp_rows_dropped: usize,
    pub stats: GeoStats,
    pub warnings: Vec<String>,
}

pub struct GeoStage {
    pub db: GeoDbStack,
    pub table: RoutingTable,
    pub geo: AsGeoMap,
    pub ownership: OwnershipSplit,
    pub files: Vec<RibFile>,
    pub summary: GeoSummary,
}

/// Ownership filtering, the routing table and per-AS country sets.
pub fn run_geo(cfg: &RunConfig) -> Result<GeoStage, PipelineError> {
    let db = load_geo_db(cfg)?;
    let files = plan_ribs(cfg)?;
    let (acc, warnings) = fold_ribs(
        &files,
        cfg,
        |snap| {
            let mut acc = OwnershipAccumulator::new();
            for r in &snap.records {
                if !r.origin_asn.is_as_set() {
                    acc.observe(utc_day(r.snapshot_time), r.prefix, r.origin_asn);
                }
            }
            acc
        },
        |mut a, b| {
            a.merge(b);
            a
        },
        OwnershipAccumulator::new(),
    )?;
    let ownership = acc.finish(cfg.min_ownership_days);
    let table = RoutingTable::from_ownership(&ownership.owned);
    let prefix_geo: Vec<(Asn, crate::geo::Located)> = ownership
        .owned
        .par_iter()
        .map(|o| (o.origin_asn, db.locate_prefix(o.prefix)))
        .collect();

    let datasets = load_ip_to_as(cfg)?;
    let infra = match &cfg.infra_ips {
        Some(p) => build_infra_records(&load_infra(p)?, &db, &datasets, &table),
        None => Vec::new(),
    };
    let (ixp, ixp_dropped) = match &cfg.ixp {
        Some(p) => load_ixp(p)?,
        None => (Vec::new(), 0),
    };
    let geo = build_as_geo(prefix_geo, &infra, &ixp);

    let summary = GeoSummary {
        rib_files: files.len(),
        rib_files_used: files.iter().filter(|f| !f.keep.is_empty()).count(),
        owned_prefix_origins: ownership.owned.len(),
        transient_prefix_origins: ownership.transient.len(),
        routing_table_prefixes: table.len(),
        infra_ips: infra.len(),
        infra_ips_mapped: infra.iter().filter(|r| r.asn.is_some()).count(),
        ixp_memberships: ixp.len(),
        ixp_rows_dropped: ixp_dropped,
        stats: geo.stats(),
        warnings,
    };

    let out = &cfg.output_dir;
    write_output(out, AS_GEO_FILE, |w| geo.write_jsonl(w))?;
    write_output(out, ROUTING_TABLE_FILE, |w| table.write_csv(w))?;
    write_output(out, OWNERSHIP_TRANSIENTS_FILE, |w| {
        writeln!(w, "prefix,origin_asn,days_seen")?;
        for o in &ownership.transient {
            writeln!(w, "{},{},{}", o.prefix, o.origin_asn, o.days_seen.len())?;
        }
        Ok(())
    })?;
    write_output(out, RIB_INVENTORY_FILE, |w| {
        writeln!(w, "path,snapshot_time,epoch,peers,kept_peers")?;
        for f in &files {
            let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{}",
                f.path.display(),
                opt(f.snapshot_time),
                opt(f.epoch.map(u64::from)),
                f.peers,
                f.keep.len()
            )?;
        }
        Ok(())
    })?;
    write_json(out, GEO_STATS_FILE, &summary)?;
    write_output(out, GEO_CDF_FILE, |w| {
        writeln!(w, "countries,as_count,cumulative_fraction")?;
        for p in &summary.stats.cdf {
            writeln!(
                w,
                "{},{},{:.6}",
                p.countries, p.as_count, p.cumulative_fraction
            )?;
        }
        Ok(())
    })?;

    Ok(GeoStage {
        db,
        table,
        geo,
        ownership,
        files,
        summary,
    })
}

pub fn load_as_geo(cfg: &RunConfig) -> Result<AsGeoMap, PipelineError> {
    let path = cfg.output_dir.join(AS_GEO_FILE);
    let f = File::open(&path).map_err(|_| {
        PipelineError::Missing(format!("{} (run the geo stage first)", path.display()))
    })?;
    Ok(AsGeoMap::read_jsonl(
        BufReader::new(f),
        &path.display().to_string(),
    )?)
}

pub fn load_routing_table(cfg: &RunConfig) -> Result<RoutingTable, PipelineError> {
    let path = cfg.output_dir.join(ROUTING_TABLE_FILE);
    if !path.exists() {
        return Err(PipelineError::Missing(format!(
            "{} (run the geo stage first)",
            path.display()
        )));
    }
    Ok(RoutingTable::load(&path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerRow {
    pub peer_ip: IpAddr,
    pub peer_asn: Asn,
    pub country: Option<CountryCode>,
    pub epochs_seen: u32,
    pub coverage_percent: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectSummary {
    pub peering: PeeringReport,
    pub epochs: u32,
    pub peers: usize,
    pub counters: DetectCounters,
    pub error_samples: Vec<String>,
    pub warnings: Vec<String>,
}

/// Detours before and after removing possible peering routes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeeringReport {
    pub filter_applied: bool,
    pub detoured_entries_before: u64,
    pub detoured_entries_after: u64,
    pub detoured_entries_filtered_percent: f64,
    pub unique_detours_before: u64,
    pub unique_detours_after: u64,
    pub unique_detours_filtered_percent: f64,
}

fn percent_removed(before: u64, after: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (before - after) as f64 / before as f64
    }
}

impl PeeringReport {
    pub fn of(c: &DetectCounters, applied: bool) -> Self {
        PeeringReport {
            filter_applied: applied,
            detoured_entries_before: c.detoured_before_filter,
            detoured_entries_after: c.detoured_after_filter,
            detoured_entries_filtered_percent: percent_removed(
                c.detoured_before_filter,
                c.detoured_after_filter,
            ),
            unique_detours_before: c.unique_detours_before_filter,
            unique_detours_after: c.unique_detours_after_filter,
            unique_detours_filtered_percent: percent_removed(
                c.unique_detours_before_filter,
                c.unique_detours_after_filter,
            ),
        }
    }

    pub fn render_text(&self) -> String {
        let rows = vec![
            vec![
                "Detoured entries".to_string(),
                self.detoured_entries_before.to_string(),
                self.detoured_entries_after.to_string(),
                format!("{:.2}", self.detoured_entries_filtered_percent),
            ],
            vec![
                "Unique detours".to_string(),
                self.unique_detours_before.to_string(),
                self.unique_detours_after.to_string(),
                format!("{:.2}", self.unique_detours_filtered_percent),
            ],
        ];
        let title = if self.filter_applied {
            "Routes that may have peering relations"
        } else {
            "Routes that may have peering relations (filter not applied)"
        };
        render_table_text(
            title,
            &["", "Before filter", "After filter", "% filtered"],
            &rows,
        )
    }
}

pub struct DetectStage {
    pub run: DetectRun,
    pub peers: Vec<PeerRow>,
    pub summary: DetectSummary,
}

pub fn load_relationships(cfg: &RunConfig) -> Result<RelationshipDb, PipelineError> {
    match &cfg.as_rel {
        Some(p) => Ok(RelationshipDb::load(p)?),
        None => Ok(RelationshipDb::new()),
    }
}

/// Detection over every retained route.
pub fn run_detect(
    cfg: &RunConfig,
    geo: &AsGeoMap,
    db: &GeoDbStack,
    files: Option<&[RibFile]>,
) -> Result<DetectStage, PipelineError> {
    let rel = load_relationships(cfg)?;
    let planned;
    let files = match files {
        Some(f) => f,
        None => {
            planned = plan_ribs(cfg)?;
            &planned
        }
    };
    if files.is_empty() {
        return Err(PipelineError::Missing("no RIB files configured".into()));
    }
    // The filter is always evaluated so the before/after report exists;
    // when disabled its removals are put back afterwards.
    let opts = DetectOptions {
        peering_filter: true,
    };
    let mut warnings = Vec::new();
    if cfg.as_rel.is_none() {
        warnings.push("no AS relationships configured: the peering filter removes nothing".into());
    }
    let (run, w) = fold_ribs(
        files,
        cfg,
        |snap| {
            let mut r = DetectRun::default();
            r.observe_snapshot(snap, geo, &rel, opts);
            r
        },
        DetectRun::merge,
        DetectRun::default(),
    )?;
    warnings.extend(w);
    let mut run = run.finish();
    let peering = PeeringReport::of(&run.counters, cfg.peering_filter);
    if !cfg.peering_filter {
        let mut back = std::mem::take(&mut run.filtered);
        run.detours.append(&mut back);
        run.counters.definite_detour += run.counters.filtered_by_peering;
        run.counters.filtered_by_peering = 0;
        run = run.finish();
    }
    let epochs = cfg.epochs();
    if let Some(bad) = run.detours.iter().find(|d| d.epoch >= epochs) {
        return Err(PipelineError::Invariant(format!(
            "detour {} at epoch {} is outside the {epochs}-epoch window",
            bad.key, bad.epoch
        )));
    }

    let peers: Vec<PeerRow> = run
        .peer_epochs
        .iter()
        .map(|(p, e)| PeerRow {
            peer_ip: p.ip,
            peer_asn: p.asn,
            country: match p.ip {
                IpAddr::V4(v4) => db.country(v4),
                IpAddr::V6(_) => None,
            },
            epochs_seen: e.len() as u32,
            coverage_percent: 100.0 * e.len() as f64 / epochs as f64,
        })
        .collect();

    let summary = DetectSummary {
        peering: peering.clone(),
        epochs,
        peers: peers.len(),
        counters: run.counters.clone(),
        error_samples: run.error_samples.clone(),
        warnings,
    };
    let out = &cfg.output_dir;
    write_output(out, DETOURS_FILE, |w| {
        write_verdicts_jsonl(w, Outcome::DefiniteDetour, &run.detours)
    })?;
    write_output(out, FILTERED_FILE, |w| {
        write_verdicts_jsonl(w, Outcome::FilteredByPeering, &run.filtered)
    })?;
    write_peers(out, &peers)?;
    write_json(out, DETECT_SUMMARY_FILE, &summary)?;
    let text = peering.render_text();
    write_output(out, PEERING_REPORT_FILE, |w| w.write_all(text.as_bytes()))?;
    Ok(DetectStage {
        run,
        peers,
        summary,
    })
}

fn write_peers(dir: &Path, peers: &[PeerRow]) -> Result<PathBuf, PipelineError> {
    write_output(dir, PEERS_FILE, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record([
            "peer_ip",
            "peer_asn",
            "country",
            "epochs_seen",
            "coverage_percent",
        ])?;
        for p in peers {
            c.write_record([
                p.peer_ip.to_string(),
                p.peer_asn.to_string(),
                p.country.map(|c| c.to_string()).unwrap_or_default(),
                p.epochs_seen.to_string(),
                format!("{:.3}", p.coverage_percent),
            ])?;
        }
        c.flush()
    })
}

pub fn read_detours(path: &Path) -> Result<Vec<DetourRecord>, PipelineError> {
    let f = File::open(path).map_err(|_| {
        PipelineError::Missing(format!("{} (run the detect stage first)", path.display()))
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_at(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: DetourRecord = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        d.check_invariants()
            .map_err(|e| PipelineError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        out.push(d);
    }
    Ok(out)
}

pub fn read_peers(path: &Path) -> Result<Vec<PeerRow>, PipelineError> {
    let f = File::open(path).map_err(|_| {
        PipelineError::Missing(format!("{} (run the detect stage first)", path.display()))
    })?;
    let mut rows = Vec::new();
    let mut r = csv::Reader::from_reader(f);
    for (i, rec) in r.records().enumerate() {
        let bad =
            |m: String| PipelineError::Data(format!("{}: row {}: {m}", path.display(), i + 1));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        let country = match field(2)? {
            "" => None,
            c => Some(crate::types::CountryCode::must(c)),
        };
        rows.push(PeerRow {
            peer_ip: field(0)?.parse().map_err(|_| bad("peer_ip".into()))?,
            peer_asn: field(1)?.parse().map_err(|_| bad("peer_asn".into()))?,
            country,
            epochs_seen: field(3)?.parse().map_err(|_| bad("epochs_seen".into()))?,
            coverage_percent: field(4)?
                .parse()
                .map_err(|_| bad("coverage_percent".into()))?,
        });
    }
    Ok(rows)
}

pub fn peer_countries(peers: &[PeerRow]) -> BTreeMap<PeerId, Option<CountryCode>> {
    peers
        .iter()
        .map(|p| {
            (
                PeerId {
                    ip: p.peer_ip,
                    asn: p.peer_asn,
                },
                p.country,
            )
        })
        .collect()
}

pub struct DynamicsStage {
    pub scored: Vec<ScoredTimeline>,
    pub report: DynamicsReport,
}

pub fn run_dynamics(
    cfg: &RunConfig,
    detours: &[DetourRecord],
    peers: &[PeerRow],
) -> Result<DynamicsStage, PipelineError> {
    let epochs = cfg.epochs();
    let timelines = build_timelines(detours, epochs).map_err(|e| {
        PipelineError::Invariant(format!(
            "detour {} at epoch {} is outside the {} epochs",
            e.key, e.epoch, e.epochs
        ))
    })?;
    let scored = score_timelines(timelines, cfg.transient_hours);
    let report = DynamicsReport::build(&scored, epochs, &peer_countries(peers), cfg.top_n);
    let out = &cfg.output_dir;
    write_output(out, METRICS_FILE, |w| {
        write_metrics_csv(w, &scored).map_err(io::Error::other)
    })?;
    write_json(out, REPORT_JSON_FILE, &report)?;
    let headline = if cfg.dedup_representative {
        &report.per_country_dedup
    } else {
        &report.per_country_raw
    };
    write_output(out, PER_COUNTRY_FILE, |w| {
        writeln!(w, "country,peers,detours,average")?;
        for (c, a) in &headline.countries {
            writeln!(w, "{c},{},{},{:.6}", a.peers, a.detours, a.average)?;
        }
        Ok(())
    })?;
    let text = report.render_text();
    write_output(out, REPORT_TEXT_FILE, |w| w.write_all(text.as_bytes()))?;
    Ok(DynamicsStage { scored, report })
}

pub struct ValidateStage {
    pub outcomes: Vec<ValidationOutcome>,
    pub summary: ValidationSummary,
}

pub fn run_validate(
    cfg: &RunConfig,
    detours: &[DetourRecord],
    db: &GeoDbStack,
    table: RoutingTable,
) -> Result<ValidateStage, PipelineError> {
    let traces = match &cfg.traceroutes {
        Some(p) => load_traceroutes(p)?,
        None => Vec::new(),
    };
    let mapper = AsMapper {
        datasets: load_ip_to_as(cfg)?,
        table,
    };
    let (pairs, unmatched) = match_traceroutes(detours, &traces);
    let opts = ValidateOptions {
        rtt_ratio: cfg.rtt_ratio,
        rtt_floor_ms: cfg.rtt_floor_ms,
        anchor: cfg.anchor,
    };
    let (outcomes, mut summary) = validate_all(&pairs, &mapper, db, opts);
    summary.unmatched_traceroutes = unmatched;
    let out = &cfg.output_dir;
    write_output(out, VALIDATION_FILE, |w| {
        for o in &outcomes {
            serde_json::to_writer(&mut *w, o)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    write_json(out, VALIDATION_SUMMARY_FILE, &summary)?;
    Ok(ValidateStage { outcomes, summary })
}

/// Every stage in order.
pub struct RunAll {
    pub geo: GeoStage,
    pub detect: DetectStage,
    pub dynamics: DynamicsStage,
    pub validate: ValidateStage,
}

pub fn run_all(cfg: &RunConfig) -> Result<RunAll, PipelineError> {
    cfg.check_inputs()?;
    let geo = run_geo(cfg)?;
    let detect = run_detect(cfg, &geo.geo, &geo.db, Some(&geo.files))?;
    let dynamics = run_dynamics(cfg, &detect.run.detours, &detect.peers)?;
    let validate = run_validate(cfg, &detect.run.detours, &geo.db, geo.table.clone())?;
    Ok(RunAll {
        geo,
        detect,
        dynamics,
        validate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{generate, Scenario, TraceKind};

    fn small() -> Scenario {
        Scenario {
            epochs: 12,
            persistent: 3,
            transient: 3,
            flash: 2,
            shared: 2,
            filtered: 2,
            traceroutes: vec![TraceKind::Full, TraceKind::Incongruent],
            ..Scenario::default()
        }
    }

    #[test]
    fn stages_chain_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate(&small(), dir.path()).unwrap();
        let cfg = RunConfig::load(&dir.path().join(&m.config)).unwrap();
        let all = run_all(&cfg).unwrap();

        let detours = read_detours(&cfg.output_dir.join(DETOURS_FILE)).unwrap();
        assert_eq!(detours, all.detect.run.detours);
        let peers = read_peers(&cfg.output_dir.join(PEERS_FILE)).unwrap();
        assert_eq!(peers.len(), all.detect.peers.len());
        let again = run_dynamics(&cfg, &detours, &peers).unwrap();
        assert_eq!(again.report, all.dynamics.report);
        let geo = load_as_geo(&cfg).unwrap();
        assert_eq!(geo.len(), all.geo.geo.len());
        let table = load_routing_table(&cfg).unwrap();
        assert_eq!(table.len(), all.geo.table.len());
    }

    #[test]
    fn missing_stage_outputs_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            window_start: 0,
            window_end: 1,
            output_dir: dir.path().join("none"),
            ..RunConfig::default()
        };
        assert!(matches!(load_as_geo(&cfg), Err(PipelineError::Missing(_))));
        assert!(rib_files(&cfg).unwrap().is_empty());
        let db = GeoDbStack::default();
        assert!(matches!(
            run_detect(&cfg, &AsGeoMap::new(), &db, None),
            Err(PipelineError::Missing(_))
        ));
        assert_eq!(PipelineError::Config("x".into()).exit_code(), 1);
        assert_eq!(PipelineError::Data("x".into()).exit_code(), 2);
        assert_eq!(PipelineError::Invariant("x".into()).exit_code(), 3);
    }

    #[test]
    fn empty_inputs_give_empty_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            window_start: 0,
            window_end: 28_800,
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let geo = run_geo(&cfg).unwrap();
        assert!(geo.geo.is_empty());
        let v = run_validate(&cfg, &[], &geo.db, geo.table).unwrap();
        assert_eq!(v.summary, ValidationSummary::default());
        assert!(dir.path().join(AS_GEO_FILE).exists());
    }
}
