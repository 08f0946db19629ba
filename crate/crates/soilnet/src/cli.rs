//! The `soilnet` command line.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, unreadable or
//! invalid configuration) and 2 for runtime failures. Diagnostics go to
//! stderr; data goes to stdout unless `--out` names a file.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use soilnet_core::gateway::Verdict;
use soilnet_core::report::{validation_report, ReferenceSeries, ReportOptions, ValidationReport};
use soilnet_core::sim::Simulator;
use soilnet_core::stats::Measure;
use soilnet_core::{CalibrationModel, Channel, Ident, StoredRow, Transform};

use crate::config::Config;
use crate::export::{write_rows, Format};
use crate::gateway::Gateway;
use crate::model_file::{read_model, read_pairs, ModelDocument};
use crate::node::{run_node, NodeOptions, NodeReport};
use crate::series::{read_reference, write_plot_series};
use crate::server::{serve, termination_signal};
use crate::store::{Query, Store, StoreOptions};
use crate::timefmt::parse_time;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "soilnet", version, about = "Soil moisture and temperature telemetry: gateway, simulated nodes, calibration, reports")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "SOILNET_CONFIG")]
    config: Option<PathBuf>,
    /// Store directory (one sub-directory per profile).
    #[arg(long, global = true, env = "SOILNET_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the ingestion gateway until SIGINT or SIGTERM.
    Serve(ServeArgs),
    /// Run simulated sensor profiles against a gateway or straight into the store.
    Simulate(SimulateArgs),
    /// Fit a calibration model to voltage,vwc_percent pairs.
    Calibrate(CalibrateArgs),
    /// Export stored rows with water content recomputed by a model.
    Apply(ApplyArgs),
    /// Validation statistics and tables.
    Report(ReportArgs),
    /// Export stored rows as CSV, JSON or XML.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "SOILNET_LISTEN")]
    listen: Option<String>,
    /// Sync every append to disk.
    #[arg(long)]
    fsync: bool,
    /// Calibration model JSON used to fill vwc_percent.
    #[arg(long, conflicts_with = "no_calibration")]
    model: Option<PathBuf>,
    /// Store raw readings without vwc_percent.
    #[arg(long)]
    no_calibration: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Number of profiles.
    #[arg(long, env = "SOILNET_NODES")]
    nodes: Option<usize>,
    /// Simulated span, e.g. 48h, 10d or plain seconds.
    #[arg(long, env = "SOILNET_DURATION", default_value = "48h", value_parser = parse_duration)]
    duration: u64,
    /// Seconds between samples.
    #[arg(long, env = "SOILNET_CADENCE")]
    cadence: Option<u32>,
    #[arg(long, env = "SOILNET_SEED")]
    seed: Option<u64>,
    /// First sample instant, RFC 3339 or UNIX seconds.
    #[arg(long, value_parser = parse_time_arg)]
    start: Option<i64>,
    /// Gateway address.
    #[arg(long, env = "SOILNET_CONNECT", conflicts_with = "offline")]
    connect: Option<String>,
    /// Write readings directly into the store under --data-root.
    #[arg(long)]
    offline: bool,
    /// Virtual seconds per wall second; inf runs as fast as possible.
    #[arg(long, env = "SOILNET_CLOCK_SCALE", value_parser = parse_clock_scale)]
    clock_scale: Option<f64>,
    /// Consecutive transport failures tolerated per node.
    #[arg(long)]
    retry_budget: Option<u32>,
    /// Calibration model JSON used to turn water content into voltages.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// CSV with header voltage,vwc_percent; `-` reads stdin.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, env = "SOILNET_TRANSFORM", default_value = "reciprocal", value_parser = parse_transform)]
    transform: Transform,
    /// Model JSON destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RangeArgs {
    /// Profile id; all profiles when absent.
    #[arg(long)]
    profile: Option<String>,
    /// Inclusive start, RFC 3339 or UNIX seconds.
    #[arg(long, value_parser = parse_time_arg)]
    from: Option<i64>,
    /// Exclusive end, RFC 3339 or UNIX seconds.
    #[arg(long, value_parser = parse_time_arg)]
    to: Option<i64>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long, value_parser = parse_channel)]
    channel: Option<Channel>,
}

impl RangeArgs {
    fn query(&self) -> Query {
        Query {
            start: self.from,
            end: self.to,
            depth_cm: self.depth,
            channel: self.channel,
        }
    }
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, env = "SOILNET_FORMAT", default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    range: RangeArgs,
    /// Water content reference series (timestamp,depth_cm,value in percent).
    #[arg(long = "reference")]
    references: Vec<PathBuf>,
    /// Temperature reference series (timestamp,depth_cm,value in °C).
    #[arg(long = "temperature-reference")]
    temperature_references: Vec<PathBuf>,
    /// Pairing window in seconds; half the cadence by default.
    #[arg(long)]
    tolerance: Option<i64>,
    /// Recompute vwc_percent with this model before reporting.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Structured JSON report destination.
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Directory for per-depth plot series CSVs.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, env = "SOILNET_FORMAT", default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_duration(s: &str) -> Result<u64, String> {
    if let Ok(secs) = s.parse::<u64>() {
        return Ok(secs);
    }
    humantime::parse_duration(s).map(|d| d.as_secs()).map_err(|e| e.to_string())
}

fn parse_time_arg(s: &str) -> Result<i64, String> {
    parse_time(s).map_err(|e| e.to_string())
}

fn parse_clock_scale(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 1.0 => Ok(v),
        _ => Err("expected a number >= 1 or inf".into()),
    }
}

fn parse_transform(s: &str) -> Result<Transform, String> {
    s.parse().map_err(|_| "expected reciprocal or identity".to_string())
}

fn parse_channel(s: &str) -> Result<Channel, String> {
    s.parse().map_err(|_| "expected moisture or temperature".to_string())
}

/// Marks an error as the caller's fault (exit status 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `args` and runs the command, returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

struct Context_ {
    config: Config,
    data_root: PathBuf,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    let data_root = cli.data_root.clone().unwrap_or_else(|| config.data_root.clone());
    let ctx = Context_ { config, data_root };
    match cli.command {
        Command::Serve(a) => cmd_serve(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Apply(a) => cmd_apply(&ctx, a),
        Command::Report(a) => cmd_report(&ctx, a),
        Command::Export(a) => cmd_export(&ctx, a),
    }
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn load_model(path: &Path) -> anyhow::Result<CalibrationModel> {
    let file = File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    read_model(file).with_context(|| format!("reading model {}", path.display()))
}

/// Output file, or stdout.
fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_serve(ctx: &Context_, args: ServeArgs) -> anyhow::Result<()> {
    let listen = args.listen.unwrap_or_else(|| ctx.config.gateway.listen.clone());
    let calibration = match (&args.model, args.no_calibration) {
        (Some(p), _) => Some(load_model(p)?),
        (None, true) => None,
        (None, false) => ctx.config.calibration.model(),
    };
    let options = StoreOptions {
        fsync: args.fsync || ctx.config.gateway.fsync,
    };
    let store = Store::open(&ctx.data_root, options).with_context(|| format!("opening store {}", ctx.data_root.display()))?;
    let gateway = Gateway::new(Arc::new(store), calibration)?.with_allowed_skew(ctx.config.gateway.allowed_skew_s);
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        let addr = listener.local_addr()?;
        let shutdown = termination_signal().context("installing signal handlers")?;
        let mut out = io::stdout().lock();
        writeln!(out, "listening {addr}")?;
        out.flush()?;
        drop(out);
        log::info!("gateway listening on {addr}, store {}", ctx.data_root.display());
        serve(listener, Arc::new(gateway), shutdown).await?;
        Ok(())
    })
}

#[derive(Debug, Serialize)]
struct OfflineReport {
    profile_id: String,
    generated: u64,
    accepted: u64,
    duplicate: u64,
    out_of_range: u64,
}

fn cmd_simulate(ctx: &Context_, args: SimulateArgs) -> anyhow::Result<()> {
    let mut config = ctx.config.clone();
    if let Some(scale) = args.clock_scale {
        config.node.clock_scale = scale;
    }
    let seed = args.seed.unwrap_or(config.seed);
    let start = match args.start {
        Some(t) => t,
        None => config.start_timestamp().map_err(|e| usage(e.to_string()))?,
    };
    if args.nodes == Some(0) {
        return Err(usage("--nodes must be at least 1"));
    }
    let profiles = config
        .profile_configs(args.nodes, seed, args.cadence)
        .map_err(|e| usage(e.to_string()))?;
    let calibration = match &args.model {
        Some(p) => load_model(p)?,
        None => config.calibration.model().unwrap_or_else(CalibrationModel::published),
    };
    let sims = profiles
        .into_iter()
        .map(|p| {
            let id = p.profile_id.clone();
            Simulator::new(p, config.field.clone(), calibration).map_err(|e| usage(format!("profile {id}: {e}")))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut out = io::stdout().lock();
    if args.offline {
        let store = Store::open(&ctx.data_root, StoreOptions { fsync: config.gateway.fsync })
            .with_context(|| format!("opening store {}", ctx.data_root.display()))?;
        let gateway = Gateway::new(Arc::new(store), config.calibration.model())?;
        let mut reports = Vec::new();
        for sim in &sims {
            let mut rep = OfflineReport {
                profile_id: sim.profile().profile_id.to_string(),
                generated: 0,
                accepted: 0,
                duplicate: 0,
                out_of_range: 0,
            };
            for reading in sim.run(start, args.duration) {
                rep.generated += 1;
                match gateway.ingest(&reading, reading.timestamp)? {
                    Verdict::Accept => rep.accepted += 1,
                    Verdict::Duplicate => rep.duplicate += 1,
                    Verdict::OutOfRange | Verdict::Malformed => rep.out_of_range += 1,
                }
            }
            reports.push(rep);
        }
        gateway.store().flush()?;
        serde_json::to_writer_pretty(&mut out, &reports)?;
        writeln!(out)?;
        return Ok(());
    }

    let addr = args.connect.unwrap_or_else(|| config.gateway.connect.clone());
    let mut opts = NodeOptions::new(addr, config.site_id());
    opts.backoff = config.backoff();
    opts.retry_budget = args.retry_budget.unwrap_or(config.node.retry_budget);
    opts.ack_timeout = Duration::from_secs_f64(config.node.ack_timeout_s);
    opts.buffer_capacity = config.node.buffer_capacity;
    let duration = args.duration;
    let results: Vec<_> = runtime()?.block_on(async {
        let handles: Vec<_> = sims
            .into_iter()
            .map(|sim| {
                let opts = opts.clone();
                tokio::spawn(async move { run_node(&sim, start, duration, &opts).await })
            })
            .collect();
        let mut results = Vec::with_capacity(handles.len());
        for h in handles {
            results.push(h.await);
        }
        results
    });
    let mut reports: Vec<NodeReport> = Vec::new();
    let mut failures = 0;
    for r in results {
        match r.context("node task panicked")? {
            Ok(rep) => reports.push(rep),
            Err(e) => {
                eprintln!("error: {e}");
                failures += 1;
            }
        }
    }
    serde_json::to_writer_pretty(&mut out, &reports)?;
    writeln!(out)?;
    if failures > 0 {
        return Err(anyhow!("{failures} node(s) failed"));
    }
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs) -> anyhow::Result<()> {
    let pairs = if args.pairs.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        read_pairs(buf.as_slice())
    } else {
        let file = File::open(&args.pairs).with_context(|| format!("opening {}", args.pairs.display()))?;
        read_pairs(file)
    }
    .with_context(|| format!("reading pairs {}", args.pairs.display()))?;
    let model = CalibrationModel::fit(&pairs, args.transform).map_err(|e| anyhow!("{e:?}: {e}"))?;
    let fit = model.fit.expect("fitted model has stats");
    log::info!("fit on {} points: rmse {:.4} %VWC, r2 {:.5}", fit.n_points, fit.rmse, fit.r2);
    let mut out = output(args.out.as_deref())?;
    out.write_all(ModelDocument::from(&model).to_json().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn resolve_profiles(store: &Store, profile: Option<&str>) -> anyhow::Result<Vec<Ident>> {
    match profile {
        Some(p) => Ok(vec![Ident::new(p).map_err(|e| usage(format!("--profile: {e}")))?]),
        None => Ok(store.profiles()?),
    }
}

fn query_rows(store: &Store, range: &RangeArgs) -> anyhow::Result<Vec<(Ident, Vec<StoredRow>)>> {
    if let (Some(from), Some(to)) = (range.from, range.to) {
        if from > to {
            return Err(usage("--from must not be after --to"));
        }
    }
    let query = range.query();
    resolve_profiles(store, range.profile.as_deref())?
        .into_iter()
        .map(|p| {
            let rows = store.query(&p, &query)?;
            Ok((p, rows))
        })
        .collect()
}

fn recalibrate(rows: &mut [StoredRow], model: &CalibrationModel) {
    for row in rows {
        if row.reading.channel == Channel::MoistureVoltage {
            row.vwc_percent = model.apply(row.reading.value).ok();
        }
    }
}

fn cmd_apply(ctx: &Context_, args: ApplyArgs) -> anyhow::Result<()> {
    let model = load_model(&args.model)?;
    let store = Store::open_read_only(&ctx.data_root);
    let mut rows: Vec<StoredRow> = query_rows(&store, &args.range)?.into_iter().flat_map(|(_, r)| r).collect();
    recalibrate(&mut rows, &model);
    let mut out = output(args.out.as_deref())?;
    write_rows(&rows, args.format, &mut out)?;
    out.flush()?;
    Ok(())
}

fn cmd_export(ctx: &Context_, args: ExportArgs) -> anyhow::Result<()> {
    let store = Store::open_read_only(&ctx.data_root);
    let rows: Vec<StoredRow> = query_rows(&store, &args.range)?.into_iter().flat_map(|(_, r)| r).collect();
    let mut out = output(args.out.as_deref())?;
    write_rows(&rows, args.format, &mut out)?;
    out.flush()?;
    Ok(())
}

fn load_references(paths: &[PathBuf], measure: Measure) -> anyhow::Result<Vec<ReferenceSeries>> {
    paths
        .iter()
        .map(|path| {
            let file = File::open(path).with_context(|| format!("opening reference {}", path.display()))?;
            let points = read_reference(file).with_context(|| format!("reading reference {}", path.display()))?;
            let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok(ReferenceSeries { label, measure, points })
        })
        .collect()
}

#[derive(Serialize)]
struct ProfileReport<'a> {
    profile_id: &'a str,
    rows: usize,
    report: &'a ValidationReport,
}

fn cmd_report(ctx: &Context_, args: ReportArgs) -> anyhow::Result<()> {
    let store = Store::open_read_only(&ctx.data_root);
    let model = args.model.as_deref().map(load_model).transpose()?;
    let mut references = load_references(&args.references, Measure::Vwc)?;
    references.extend(load_references(&args.temperature_references, Measure::Temperature)?);
    let options = ReportOptions {
        tolerance_s: args.tolerance.unwrap_or(i64::from(ctx.config.node.cadence_s) / 2),
        ..ReportOptions::default()
    };

    let profiles = query_rows(&store, &args.range)?;
    if profiles.iter().all(|(_, rows)| rows.is_empty()) {
        return Err(anyhow!("no stored rows match the requested range"));
    }
    if let Some(dir) = &args.plot_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut reports = Vec::new();
    for (profile, mut rows) in profiles {
        if rows.is_empty() {
            continue;
        }
        if let Some(m) = &model {
            recalibrate(&mut rows, m);
        }
        let report = validation_report(&rows, &references, &options).with_context(|| format!("profile {profile}"))?;
        if let Some(dir) = &args.plot_dir {
            for measure in Measure::ALL {
                let path = dir.join(format!("{profile}_{measure}.csv"));
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_plot_series(&rows, measure, BufWriter::new(file))?;
            }
        }
        reports.push((profile, rows.len(), report));
    }

    let mut out = io::stdout().lock();
    for (i, (profile, n, report)) in reports.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        writeln!(out, "PROFILE {profile} ({n} rows)")?;
        writeln!(out)?;
        out.write_all(report.render_text().as_bytes())?;
    }
    out.flush()?;
    if let Some(path) = &args.json_out {
        let doc: Vec<_> = reports
            .iter()
            .map(|(p, n, r)| ProfileReport {
                profile_id: p.as_str(),
                rows: *n,
                report: r,
            })
            .collect();
        let mut w = output(Some(path))?;
        serde_json::to_writer_pretty(&mut w, &doc)?;
        writeln!(w)?;
        w.flush()?;
    }
    Ok(())
}
