use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use detour_core::fixtures::{generate, Scenario};
use detour_core::pipeline::{
    load_as_geo, load_geo_db, load_routing_table, read_detours, read_peers, run_all, run_detect,
    run_dynamics, run_geo, run_validate, with_jobs, PipelineError, RunConfig, DETOURS_FILE,
    PEERING_REPORT_FILE, PEERS_FILE, REPORT_TEXT_FILE,
};
use detour_core::validate::Anchor;

/// Detect international detours in BGP RIB snapshots and characterize them.
#[derive(Parser, Debug)]
#[command(name = "detour", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the AS-to-countries map, routing table and geolocation stats.
    Geo(RunArgs),
    /// Classify every retained route; needs the geo stage's outputs.
    Detect(RunArgs),
    /// Timelines, flap rate, duty cycle and report tables; needs detect outputs.
    Dynamics(RunArgs),
    /// Check detours against traceroutes; needs geo and detect outputs.
    Validate(RunArgs),
    /// All stages in order.
    Run(RunArgs),
    /// Print the rendered reports from an output directory.
    Report(ReportArgs),
    /// Write a synthetic bundle with planted detours and a manifest.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnchorArg {
    Destination,
    Return,
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    window_start: Option<u64>,
    #[arg(long)]
    window_end: Option<u64>,
    /// RIB file; repeatable. Adds to the configured files.
    #[arg(long)]
    rib: Vec<PathBuf>,
    /// Directory of RIB files; repeatable.
    #[arg(long)]
    rib_dir: Vec<PathBuf>,
    #[arg(long)]
    ip_country_db: Option<PathBuf>,
    #[arg(long)]
    fallback_db: Option<PathBuf>,
    #[arg(long)]
    infra_ips: Option<PathBuf>,
    /// IP-to-AS dataset; repeatable, earlier files take precedence.
    #[arg(long)]
    ip_to_as: Vec<PathBuf>,
    #[arg(long)]
    ixp: Option<PathBuf>,
    #[arg(long)]
    as_rel: Option<PathBuf>,
    #[arg(long)]
    traceroutes: Option<PathBuf>,
    #[arg(long)]
    min_ownership_days: Option<usize>,
    #[arg(long)]
    transient_hours: Option<u64>,
    #[arg(long)]
    rtt_ratio: Option<f64>,
    #[arg(long)]
    rtt_floor_ms: Option<f64>,
    /// Headline per-country averages use one peer per peer AS.
    #[arg(long)]
    dedup_representative: Option<bool>,
    /// Keep detours that the peering filter would remove.
    #[arg(long)]
    no_peering_filter: bool,
    #[arg(long, value_enum)]
    congruence_anchor: Option<AnchorArg>,
    #[arg(long)]
    top_n: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Directory to create the bundle in.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Draw a varied scenario from the seed instead of the default one.
    #[arg(long)]
    random: bool,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    peers: Option<usize>,
    #[arg(long)]
    stubs_per_country: Option<usize>,
    #[arg(long)]
    prefixes_per_stub: Option<usize>,
}

fn load_config(path: &Path) -> Result<RunConfig, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing(path.display().to_string()));
    }
    RunConfig::load(path)
}

fn resolve(args: &RunArgs) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let from_file = args.config.is_some();
    if let Some(v) = args.window_start {
        cfg.window_start = v;
    }
    if let Some(v) = args.window_end {
        cfg.window_end = v;
    }
    if !from_file && (args.window_start.is_none() || args.window_end.is_none()) {
        return Err(PipelineError::Config(
            "give --config or both --window-start and --window-end".into(),
        ));
    }
    cfg.ribs.extend(args.rib.iter().cloned());
    cfg.rib_dirs.extend(args.rib_dir.iter().cloned());
    cfg.ip_to_as.extend(args.ip_to_as.iter().cloned());
    let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
        if v.is_some() {
            slot.clone_from(v);
        }
    };
    set(&mut cfg.ip_country_db, &args.ip_country_db);
    set(&mut cfg.fallback_db, &args.fallback_db);
    set(&mut cfg.infra_ips, &args.infra_ips);
    set(&mut cfg.ixp, &args.ixp);
    set(&mut cfg.as_rel, &args.as_rel);
    set(&mut cfg.traceroutes, &args.traceroutes);
    if let Some(v) = &args.output_dir {
        cfg.output_dir.clone_from(v);
    }
    if let Some(v) = args.min_ownership_days {
        cfg.min_ownership_days = v;
    }
    if let Some(v) = args.transient_hours {
        cfg.transient_hours = v;
    }
    if let Some(v) = args.rtt_ratio {
        cfg.rtt_ratio = v;
    }
    if let Some(v) = args.rtt_floor_ms {
        cfg.rtt_floor_ms = v;
    }
    if let Some(v) = args.dedup_representative {
        cfg.dedup_representative = v;
    }
    if args.no_peering_filter {
        cfg.peering_filter = false;
    }
    if let Some(a) = args.congruence_anchor {
        cfg.anchor = match a {
            AnchorArg::Destination => Anchor::Destination,
            AnchorArg::Return => Anchor::Return,
        };
    }
    if let Some(v) = args.top_n {
        cfg.top_n = v;
    }
    if args.jobs.is_some() {
        cfg.jobs = args.jobs;
    }
    cfg.check()?;
    cfg.check_inputs()?;
    Ok(cfg)
}

fn cmd_geo(cfg: &RunConfig) -> Result<(), PipelineError> {
    let g = run_geo(cfg)?;
    let s = &g.summary;
    println!(
        "geo: {} ASes ({} geolocated, {} multi-country), {} routing table prefixes, {} transient prefix-origin pairs",
        s.stats.as_count,
        s.stats.geolocated,
        s.stats.multi_country,
        s.routing_table_prefixes,
        s.transient_prefix_origins
    );
    warn(&s.warnings);
    Ok(())
}

fn cmd_detect(cfg: &RunConfig) -> Result<(), PipelineError> {
    let geo = load_as_geo(cfg)?;
    let db = load_geo_db(cfg)?;
    let d = run_detect(cfg, &geo, &db, None)?;
    let c = &d.summary.counters;
    println!(
        "detect: {} entries, {} detoured ({} unique), {} removed by the peering filter",
        c.total_entries,
        c.detoured_after_filter,
        c.unique_detours_after_filter,
        c.filtered_by_peering
    );
    print!("{}", d.summary.peering.render_text());
    warn(&d.summary.warnings);
    for e in &d.summary.error_samples {
        eprintln!("error: {e}");
    }
    Ok(())
}

fn cmd_dynamics(cfg: &RunConfig) -> Result<(), PipelineError> {
    let detours = read_detours(&cfg.output_dir.join(DETOURS_FILE))?;
    let peers = read_peers(&cfg.output_dir.join(PEERS_FILE))?;
    let d = run_dynamics(cfg, &detours, &peers)?;
    println!(
        "dynamics: {} timelines, {} transient, {} flash",
        d.report.timelines, d.report.transient_timelines, d.report.flash_timelines
    );
    Ok(())
}

fn cmd_validate(cfg: &RunConfig) -> Result<(), PipelineError> {
    let detours = read_detours(&cfg.output_dir.join(DETOURS_FILE))?;
    let db = load_geo_db(cfg)?;
    let table = load_routing_table(cfg)?;
    let v = run_validate(cfg, &detours, &db, table)?;
    print_validation(&v.summary);
    Ok(())
}

fn print_validation(s: &detour_core::validate::ValidationSummary) {
    println!(
        "validate: {} pairs, {} usable, {} congruent, {} by country, {} by RTT, {} both, {} unmatched",
        s.pairs, s.usable, s.congruent, s.country_wise, s.rtt_wise, s.both, s.unmatched_traceroutes
    );
}

fn cmd_run(cfg: &RunConfig) -> Result<(), PipelineError> {
    let all = run_all(cfg)?;
    let c = &all.detect.summary.counters;
    println!(
        "run: {} entries, {} detoured ({} unique), {} timelines",
        c.total_entries,
        c.detoured_after_filter,
        c.unique_detours_after_filter,
        all.dynamics.report.timelines
    );
    print_validation(&all.validate.summary);
    warn(&all.geo.summary.warnings);
    warn(&all.detect.summary.warnings);
    println!("outputs in {}", cfg.output_dir.display());
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), PipelineError> {
    let dir = match (&args.output_dir, &args.config) {
        (Some(d), _) => d.clone(),
        (None, Some(c)) => load_config(c)?.output_dir,
        (None, None) => {
            return Err(PipelineError::Config(
                "give --output-dir or --config".into(),
            ));
        }
    };
    let mut out = std::io::stdout().lock();
    for name in [PEERING_REPORT_FILE, REPORT_TEXT_FILE] {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|_| PipelineError::Missing(path.display().to_string()))?;
        if writeln!(out, "{text}").is_err() {
            break;
        }
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), PipelineError> {
    let mut sc = if args.random {
        Scenario::random(args.seed)
    } else {
        Scenario {
            seed: args.seed,
            ..Scenario::default()
        }
    };
    if let Some(v) = args.epochs {
        sc.epochs = v;
    }
    if let Some(v) = args.peers {
        sc.peers = v;
    }
    if let Some(v) = args.stubs_per_country {
        sc.stubs_per_country = v;
    }
    if let Some(v) = args.prefixes_per_stub {
        sc.prefixes_per_stub = v;
    }
    let m = generate(&sc, &args.out).map_err(|e| match e {
        detour_core::fixtures::FixtureError::Io { .. } => PipelineError::Data(e.to_string()),
        _ => PipelineError::Config(e.to_string()),
    })?;
    println!(
        "generate: {} RIB files, {} planted detours ({} filtered), config {}",
        m.ribs.len(),
        m.truth.detours.len(),
        m.truth.filtered.len(),
        Path::new(&args.out).join(&m.config).display()
    );
    Ok(())
}

fn warn(lines: &[String]) {
    for w in lines {
        eprintln!("warning: {w}");
    }
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    let staged = |args: &RunArgs, f: fn(&RunConfig) -> Result<(), PipelineError>| {
        let cfg = resolve(args)?;
        with_jobs(cfg.jobs, || f(&cfg))?
    };
    match &cli.command {
        Command::Geo(a) => staged(a, cmd_geo),
        Command::Detect(a) => staged(a, cmd_detect),
        Command::Dynamics(a) => staged(a, cmd_dynamics),
        Command::Validate(a) => staged(a, cmd_validate),
        Command::Run(a) => staged(a, cmd_run),
        Command::Report(a) => cmd_report(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
