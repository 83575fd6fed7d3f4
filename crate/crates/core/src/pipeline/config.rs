//! `key = value` run configuration. Relative paths resolve against the
//! directory holding the configuration file.

use std::path::{Path, PathBuf};

use crate::dynamics::DEFAULT_TRANSIENT_HOURS;
use crate::geo::DEFAULT_MIN_OWNERSHIP_DAYS;
use crate::ingest::EPOCH_SECONDS;
use crate::validate::{Anchor, DEFAULT_RTT_FLOOR_MS, DEFAULT_RTT_RATIO};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub window_start: u64,
    /// Exclusive end of the study window.
    pub window_end: u64,
    pub ribs: Vec<PathBuf>,
    pub rib_dirs: Vec<PathBuf>,
    pub ip_country_db: Option<PathBuf>,
    pub fallback_db: Option<PathBuf>,
    pub infra_ips: Option<PathBuf>,
    pub ip_to_as: Vec<PathBuf>,
    pub ixp: Option<PathBuf>,
    pub as_rel: Option<PathBuf>,
    pub traceroutes: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub min_ownership_days: usize,
    pub transient_hours: u64,
    pub peering_filter: bool,
    /// Headline per-country averages use one peer per peer AS.
    pub dedup_representative: bool,
    pub rtt_ratio: f64,
    pub rtt_floor_ms: f64,
    pub anchor: Anchor,
    pub top_n: usize,
    pub jobs: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            window_start: 0,
            window_end: 0,
            ribs: Vec::new(),
            rib_dirs: Vec::new(),
            ip_country_db: None,
            fallback_db: None,
            infra_ips: None,
            ip_to_as: Vec::new(),
            ixp: None,
            as_rel: None,
            traceroutes: None,
            output_dir: PathBuf::from("out"),
            min_ownership_days: DEFAULT_MIN_OWNERSHIP_DAYS,
            transient_hours: DEFAULT_TRANSIENT_HOURS,
            peering_filter: true,
            dedup_representative: true,
            rtt_ratio: DEFAULT_RTT_RATIO,
            rtt_floor_ms: DEFAULT_RTT_FLOOR_MS,
            anchor: Anchor::Destination,
            top_n: 10,
            jobs: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T, PipelineError> {
    v.parse()
        .map_err(|_| PipelineError::Config(format!("line {line}: {key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str, line: usize) -> Result<bool, PipelineError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!(
            "line {line}: {key}: expected true or false, got {v:?}"
        ))),
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let mut c = RunConfig {
            output_dir: base.join("out"),
            ..RunConfig::default()
        };
        let mut have_start = false;
        let mut have_end = false;
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let Some((k, v)) = raw.split_once('=') else {
                return Err(PipelineError::Config(format!(
                    "line {line}: expected key = value"
                )));
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "window_start" => {
                    c.window_start = parse_num(k, v, line)?;
                    have_start = true;
                }
                "window_end" => {
                    c.window_end = parse_num(k, v, line)?;
                    have_end = true;
                }
                "rib" => c.ribs.push(path(v)),
                "rib_dir" => c.rib_dirs.push(path(v)),
                "ip_country_db" => c.ip_country_db = Some(path(v)),
                "fallback_db" => c.fallback_db = Some(path(v)),
                "infra_ips" => c.infra_ips = Some(path(v)),
                "ip_to_as" => c.ip_to_as.push(path(v)),
                "ixp" => c.ixp = Some(path(v)),
                "as_rel" => c.as_rel = Some(path(v)),
                "traceroutes" => c.traceroutes = Some(path(v)),
                "output_dir" => c.output_dir = path(v),
                "min_ownership_days" => c.min_ownership_days = parse_num(k, v, line)?,
                "transient_hours" => c.transient_hours = parse_num(k, v, line)?,
                "peering_filter" => c.peering_filter = parse_bool(k, v, line)?,
                "dedup_representative" => c.dedup_representative = parse_bool(k, v, line)?,
                "rtt_ratio" => c.rtt_ratio = parse_num(k, v, line)?,
                "rtt_floor_ms" => c.rtt_floor_ms = parse_num(k, v, line)?,
                "congruence_anchor" => {
                    c.anchor = match v {
                        "destination" => Anchor::Destination,
                        "return" => Anchor::Return,
                        _ => {
                            return Err(PipelineError::Config(format!(
                                "line {line}: congruence_anchor must be destination or return"
                            )))
                        }
                    }
                }
                "top_n" => c.top_n = parse_num(k, v, line)?,
                "jobs" => c.jobs = Some(parse_num(k, v, line)?),
                _ => {
                    return Err(PipelineError::Config(format!(
                        "line {line}: unknown key {k:?}"
                    )))
                }
            }
        }
        if !have_start || !have_end {
            return Err(PipelineError::Config(
                "window_start and window_end are required".into(),
            ));
        }
        c.check()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.window_end <= self.window_start {
            return bad("window_end must be after window_start");
        }
        if !(self.window_end - self.window_start).is_multiple_of(EPOCH_SECONDS) {
            return bad("the window must be a whole number of 8-hour epochs");
        }
        if self.rtt_ratio < 1.0 || !self.rtt_ratio.is_finite() {
            return bad("rtt_ratio must be at least 1");
        }
        if self.rtt_floor_ms < 0.0 || !self.rtt_floor_ms.is_finite() {
            return bad("rtt_floor_ms must be non-negative");
        }
        if self.min_ownership_days == 0 {
            return bad("min_ownership_days must be positive");
        }
        if self.jobs == Some(0) {
            return bad("jobs must be positive");
        }
        Ok(())
    }

    pub fn epochs(&self) -> u32 {
        u32::try_from((self.window_end - self.window_start) / EPOCH_SECONDS).unwrap_or(u32::MAX)
    }

    /// Every configured input path, in a fixed order.
    pub fn input_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        out.extend(self.ribs.iter().map(PathBuf::as_path));
        out.extend(self.rib_dirs.iter().map(PathBuf::as_path));
        for p in [&self.ip_country_db, &self.fallback_db, &self.infra_ips]
            .into_iter()
            .flatten()
        {
            out.push(p);
        }
        out.extend(self.ip_to_as.iter().map(PathBuf::as_path));
        for p in [&self.ixp, &self.as_rel, &self.traceroutes]
            .into_iter()
            .flatten()
        {
            out.push(p);
        }
        out
    }

    /// Fails on the first configured input that does not exist.
    pub fn check_inputs(&self) -> Result<(), PipelineError> {
        match self.input_paths().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(PipelineError::Missing(p.display().to_string())),
            None => Ok(()),
        }
    }
}
