use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hexpick_api::{parse_bbox, parse_window, AppState};
use hexpick_core::aggregate;
use hexpick_core::clock::DateKey;
use hexpick_core::config::Config;
use hexpick_core::geo::{BBox, LonLat};
use hexpick_core::ingest::{ingest_dir, IngestReport};
use hexpick_core::poi::{load_pois, read_catalog, CategoryMap, PoiCategory, PoiLoadReport};
use hexpick_core::scoring::{self, Criterion, ScoreParams};
use hexpick_core::store::{Region, Store};
use hexpick_core::synth::{synth, SynthSpec};

#[derive(Parser)]
#[command(
    name = "hexpick",
    version,
    about = "Taxi pick-up point analysis over hexagonal aggregates"
)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic GPS trace set with its planted truth.
    Synth(SynthArgs),
    /// Extract trips from GPS CSVs and write a store.
    Ingest(IngestArgs),
    /// Print an aggregate report from a store.
    Aggregate(AggregateArgs),
    /// Score a region's candidate points and write a CSV.
    Score(ScoreArgs),
    /// Serve the HTTP API over a store until interrupted.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Full spec as TOML; the flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_date)]
    start: Option<DateKey>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    taxis: Option<u32>,
    #[arg(long)]
    trips_per_day: Option<u64>,
    #[arg(long)]
    weekend_uplift: Option<f64>,
    #[arg(long)]
    pois: Option<u32>,
    #[arg(long)]
    shards: Option<u32>,
    /// Study-area configuration written alongside the traces.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    gps_dir: PathBuf,
    /// POI catalog CSV (id,lon,lat,name,address,category).
    #[arg(long)]
    poi: PathBuf,
    /// Raw-to-canonical category CSV; the built-in mapping when absent.
    #[arg(long)]
    category_map: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: PathBuf,
    /// Also write the rejected occupied runs as CSV.
    #[arg(long)]
    rejected: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Report {
    Calendar,
    Temporal,
    Heatmap,
    Glyphs,
    Pois,
    Compare,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone)]
enum RegionArg {
    All,
    Cells(Region),
}

impl RegionArg {
    fn resolve(&self, store: &Store) -> Region {
        match self {
            RegionArg::All => Region::covering(store.grid()),
            RegionArg::Cells(r) => r.clone(),
        }
    }
}

#[derive(Args)]
struct AggregateArgs {
    #[arg(value_enum)]
    report: Report,
    #[arg(long)]
    store: PathBuf,
    #[arg(long, value_parser = parse_date)]
    date: Option<DateKey>,
    /// First day of a calendar report; defaults to the store's first day.
    #[arg(long, value_parser = parse_date)]
    from: Option<DateKey>,
    #[arg(long, value_parser = parse_date)]
    to: Option<DateKey>,
    /// Comma-separated `q:r` cells, or `all`.
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    region: Option<RegionArg>,
    /// Second region of a comparison.
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    region_b: Option<RegionArg>,
    /// Comma-separated POI categories for the comparison beeswarm.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long, value_parser = |s: &str| parse_bbox(s), allow_hyphen_values = true)]
    bbox: Option<BBox>,
    /// Donut radius in meters.
    #[arg(long, default_value_t = aggregate::DEFAULT_DONUT_RADIUS_M)]
    radius: f64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    store: PathBuf,
    /// Comma-separated `q:r` cells, or `all`.
    #[arg(long, value_parser = parse_region, allow_hyphen_values = true)]
    region: RegionArg,
    #[arg(long, value_parser = parse_date)]
    date: DateKey,
    /// Coverage radius D in meters.
    #[arg(long, default_value_t = scoring::DEFAULT_RADIUS_M)]
    radius: f64,
    /// Local hours `H-H`.
    #[arg(long, default_value = "0-24", value_parser = |s: &str| parse_window(s))]
    window: (u32, u32),
    #[arg(long, default_value = "AD", value_parser = |s: &str| s.parse::<Criterion>())]
    by: Criterion,
    #[arg(long)]
    ascending: bool,
    /// Extra candidate `lon,lat[,label]`; repeatable.
    #[arg(long = "add", value_parser = parse_point, allow_hyphen_values = true)]
    add: Vec<(LonLat, String)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
}

fn parse_date(s: &str) -> Result<DateKey, String> {
    s.parse()
}

fn parse_region(s: &str) -> Result<RegionArg, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(RegionArg::All);
    }
    s.parse::<Region>()
        .map(RegionArg::Cells)
        .map_err(|e| e.to_string())
}

fn parse_point(s: &str) -> Result<(LonLat, String), String> {
    let mut parts = s.splitn(3, ',');
    let mut num = |name: &str| -> Result<f64, String> {
        parts
            .next()
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| format!("expected lon,lat[,label] with a numeric {name}"))
    };
    let (lon, lat) = (num("lon")?, num("lat")?);
    let label = parts.next().unwrap_or("").to_string();
    Ok((LonLat::new(lon, lat), label))
}

/// A failure with its process exit code.
enum Failure {
    Usage(clap::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(sub: &str, msg: impl std::fmt::Display) -> Failure {
    let mut cmd = Cli::command();
    let cmd = cmd.find_subcommand_mut(sub).expect("known subcommand");
    Failure::Usage(cmd.error(ErrorKind::MissingRequiredArgument, msg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::Ingest(a) => run_ingest(a),
        Cmd::Aggregate(a) => run_aggregate(a),
        Cmd::Score(a) => run_score(a),
        Cmd::Serve(a) => run_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// Error chain joined by `: `, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<io::Error>())
        .any(|io| io.kind() == io::ErrorKind::BrokenPipe)
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> anyhow::Result<Config> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

fn open_store(path: &Path) -> anyhow::Result<Store> {
    Store::open(path).with_context(|| format!("opening store {}", path.display()))
}

fn run_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.start {
        spec.start = v;
    }
    if let Some(v) = a.days {
        spec.days = v;
    }
    if let Some(v) = a.taxis {
        spec.taxis = v;
    }
    if let Some(v) = a.trips_per_day {
        spec.trips_per_day = v;
    }
    if let Some(v) = a.weekend_uplift {
        spec.weekend_uplift = v;
    }
    if let Some(v) = a.pois {
        spec.poi_count = v;
    }
    if let Some(v) = a.shards {
        spec.shards = v;
    }
    if let Some(p) = &a.config {
        spec.config = Config::load(p).map_err(anyhow::Error::from)?;
    }
    if let Err(e) = spec.validate() {
        return Err(usage("synth", e));
    }
    let report = synth(&spec, &a.out).context("synth")?;
    write_json(&report, None)?;
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    pois: PoiLoadReport,
    ingest: IngestReport,
    trips: u64,
    vacant: u64,
    days: usize,
}

fn run_ingest(a: IngestArgs) -> Result<(), Failure> {
    let cfg = load_config(a.config.as_deref())?;
    let grid = cfg.grid().map_err(anyhow::Error::from)?;
    let rules = cfg.rules().map_err(anyhow::Error::from)?;
    let (pois, poi_report) = match &a.category_map {
        Some(m) => load_pois(&a.poi, m, &grid),
        None => File::open(&a.poi)
            .map_err(|source| hexpick_core::poi::PoiError::Io {
                path: a.poi.display().to_string(),
                source,
            })
            .and_then(|f| read_catalog(f, &CategoryMap::default_map(), &grid)),
    }
    .with_context(|| format!("loading POIs from {}", a.poi.display()))?;
    log::info!("loaded {} POIs", poi_report.loaded);
    let out = ingest_dir(&a.gps_dir, pois, &rules, &grid, cfg.clock()).context("ingest")?;
    out.store
        .write(&a.store)
        .with_context(|| format!("writing store {}", a.store.display()))?;
    if let Some(p) = &a.rejected {
        let mut w =
            csv::Writer::from_path(p).with_context(|| format!("creating {}", p.display()))?;
        w.write_record(["taxi_id", "stime", "etime", "reason"])
            .map_err(anyhow::Error::from)?;
        for r in &out.rejected {
            w.write_record([
                r.taxi_id.to_string(),
                r.stime.to_string(),
                r.etime.to_string(),
                r.reason.as_str().into(),
            ])
            .map_err(anyhow::Error::from)?;
        }
        w.flush().map_err(anyhow::Error::from)?;
    }
    let m = out.store.manifest();
    let summary = IngestSummary {
        pois: poi_report,
        trips: m.trip_count,
        vacant: m.vacant_count,
        days: m.days.len(),
        ingest: out.report,
    };
    write_json(&summary, None)?;
    Ok(())
}

fn run_aggregate(a: AggregateArgs) -> Result<(), Failure> {
    let need_date = || {
        a.date
            .ok_or_else(|| usage("aggregate", "this report requires --date"))
    };
    let need_region = |r: &Option<RegionArg>, flag: &str| {
        r.clone()
            .ok_or_else(|| usage("aggregate", format!("this report requires {flag}")))
    };
    if matches!(a.format, Format::Csv)
        && !matches!(
            a.report,
            Report::Calendar | Report::Temporal | Report::Heatmap
        )
    {
        return Err(usage(
            "aggregate",
            "--format csv is available for calendar, temporal and heatmap",
        ));
    }
    let out = a.out.as_deref();
    match a.report {
        Report::Calendar => {
            let store = open_store(&a.store)?;
            let range = store.date_range();
            let (Some(from), Some(to)) =
                (a.from.or(range.map(|r| r.0)), a.to.or(range.map(|r| r.1)))
            else {
                return Err(usage(
                    "aggregate",
                    "the store is empty; pass --from and --to",
                ));
            };
            let cells = aggregate::calendar(&store, from, to).map_err(|e| usage("aggregate", e))?;
            match a.format {
                Format::Json => write_json(&cells, out)?,
                Format::Csv => write_csv(
                    out,
                    ["date", "total_trips"],
                    cells
                        .iter()
                        .map(|c| [c.date.to_string(), c.total_trips.to_string()]),
                )?,
            }
        }
        Report::Temporal => {
            let date = need_date()?;
            let store = open_store(&a.store)?;
            let region = a.region.as_ref().map(|r| r.resolve(&store));
            let day = aggregate::day_summary(&store, region.as_ref(), date);
            match a.format {
                Format::Json => write_json(&day, out)?,
                Format::Csv => write_csv(
                    out,
                    ["hour", "pickups", "peak"],
                    day.hourly.iter().enumerate().map(|(h, n)| {
                        [
                            h.to_string(),
                            n.to_string(),
                            day.peak_hours.contains(&h).to_string(),
                        ]
                    }),
                )?,
            }
        }
        Report::Heatmap => {
            let date = need_date()?;
            let store = open_store(&a.store)?;
            let cells = aggregate::heatmap(&store, date);
            match a.format {
                Format::Json => write_json(&cells, out)?,
                Format::Csv => write_csv(
                    out,
                    ["q", "r", "pickups"],
                    cells.iter().map(|c| {
                        [
                            c.hex.q.to_string(),
                            c.hex.r.to_string(),
                            c.pickups.to_string(),
                        ]
                    }),
                )?,
            }
        }
        Report::Glyphs => {
            let date = need_date()?;
            let region = need_region(&a.region, "--region")?;
            let store = open_store(&a.store)?;
            let glyphs = aggregate::cell_glyphs(&store, date, &region.resolve(&store))
                .map_err(anyhow::Error::from)?;
            write_json(&glyphs, out)?;
        }
        Report::Pois => {
            let date = need_date()?;
            let store = open_store(&a.store)?;
            let bbox = a.bbox.unwrap_or(store.grid().bbox);
            let donuts = aggregate::poi_donuts(&store, &bbox, date, a.radius)
                .map_err(|e| usage("aggregate", e))?;
            write_json(&donuts, out)?;
        }
        Report::Compare => {
            let date = need_date()?;
            let ra = need_region(&a.region, "--region")?;
            let rb = need_region(&a.region_b, "--region-b")?;
            let filter = match &a.filter {
                None => PoiCategory::ALL.to_vec(),
                Some(s) => s
                    .split(',')
                    .map(|c| c.trim().parse::<PoiCategory>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| usage("aggregate", e))?,
            };
            let store = open_store(&a.store)?;
            let payload = hexpick_api::CompareResponse {
                date,
                a: hexpick_api::region_panel(&store, &ra.resolve(&store), date, &filter)
                    .map_err(|e| usage("aggregate", e))?,
                b: hexpick_api::region_panel(&store, &rb.resolve(&store), date, &filter)
                    .map_err(|e| usage("aggregate", e))?,
            };
            write_json(&payload, out)?;
        }
    }
    Ok(())
}

fn write_csv<const N: usize>(
    path: Option<&Path>,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(output(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn run_score(a: ScoreArgs) -> Result<(), Failure> {
    let store = open_store(&a.store)?;
    let params = ScoreParams::for_date(&store.clock(), a.date, a.radius, a.window.0, a.window.1)
        .map_err(|e| usage("score", e))?;
    let region = a.region.resolve(&store);
    let ev = scoring::evaluate_region(&store, &region, &params, &a.add).map_err(|e| match e {
        scoring::ScoringError::OutsideArea { .. } | scoring::ScoringError::InvalidRadius(_) => {
            usage("score", e)
        }
        other => Failure::Data(other.into()),
    })?;
    let ranked = scoring::rank(ev.candidates, a.by, !a.ascending);
    let mut w = output(a.out.as_deref())?;
    scoring::write_scores_csv(&ranked, &mut w).map_err(anyhow::Error::from)?;
    w.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<(), Failure> {
    let store = open_store(&a.store)?;
    let rt = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
    let addr = SocketAddr::new(a.host, a.port);
    rt.block_on(hexpick_api::serve(AppState::new(store), addr))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}
