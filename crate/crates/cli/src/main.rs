//! `aisport`: the port-analytics pipeline as subcommands.
//!
//! Exit status: 0 on success, 1 when a data-quality threshold is exceeded,
//! 2 on usage or I/O errors.

mod manifest;
mod pipeline;

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use aisport::ingest::{run_live, run_replay, Source, SourceConfig, Store, StoredLine, ENDPOINT_ENV};
use aisport::metrics::{
    schedule_table, write_schedule_csv, write_voyage_metrics_csv, write_weekly_csv, GroundTruthCalls, MetricsOptions, MetricsReport,
    Statistic,
};
use aisport::synth::{builtin_port, generate, Scenario};
use aisport::validate::Method;
use aisport::voyage::VoyageRecord;
use aisport::ValidatedMessage;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use manifest::{sidecar, InputDigest, RunManifest};
use pipeline::{MetricsInput, Record};

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Quality(String),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<aisport::metrics::MetricsError> for Failure {
    fn from(e: aisport::metrics::MetricsError) -> Self {
        Failure::Usage(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "aisport", version, about = "AIS port analytics: decode, validate, voyages, metrics")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// NMEA lines to JSONL messages.
    Decode(DecodeArgs),
    /// Correct navigational status of decoded messages.
    Validate(ValidateArgs),
    /// Group validated messages into voyages with phases.
    Voyages(VoyagesArgs),
    /// Turnaround, anchorage waiting time, arrivals and error reports.
    Metrics(MetricsArgs),
    /// Receive a live feed or replay a capture into the store.
    Ingest(IngestArgs),
    /// Generate a synthetic port scenario with ground truth.
    Synth(SynthArgs),
    /// All stages from NMEA to metrics.
    Run(RunArgs),
}

#[derive(Args, Serialize)]
struct DecodeArgs {
    /// NMEA file, stored JSONL capture, store directory, or `-`.
    #[arg(default_value = "-")]
    input: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Error channel (JSONL); stderr if absent.
    #[arg(long)]
    errors: Option<PathBuf>,
    #[command(flatten)]
    quality: QualityArgs,
}

#[derive(Args, Serialize, Clone)]
struct QualityArgs {
    /// Exit 1 if the share of rejected lines exceeds this.
    #[arg(long)]
    max_error_rate: Option<f64>,
}

#[derive(Args, Serialize, Clone)]
struct ValidationArgs {
    /// Port polygons (GeoJSON FeatureCollection).
    #[arg(long)]
    port: Option<PathBuf>,
    /// `key = value` validation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// geofence, kinematic, knn or ensemble; overrides the config file.
    #[arg(long)]
    method: Option<String>,
    /// Validated JSONL history to fit the k-NN model on.
    #[arg(long)]
    knn_train: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    #[arg(default_value = "-")]
    input: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    validation: ValidationArgs,
}

#[derive(Args, Serialize)]
struct VoyagesArgs {
    #[arg(default_value = "-")]
    input: String,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// `all`, `circle:LAT,LON,RADIUS_M`, `bbox:MINLAT,MINLON,MAXLAT,MAXLON` or a GeoJSON file.
    #[arg(long)]
    area: Option<String>,
    /// Port polygons, for terminal names of moored phases.
    #[arg(long)]
    port: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct ReportArgs {
    /// Port-call CSV: `date,category,arrivals` or `timestamp,mmsi,category`.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// Dates left out of the error computation (comma separated).
    #[arg(long, value_delimiter = ',')]
    exclude_dates: Vec<NaiveDate>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Hours added to UTC before taking calendar dates.
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    tz_offset: i32,
    /// Weekly statistic: mean, median or count.
    #[arg(long, default_value = "mean")]
    statistic: String,
    /// Emit the berth schedule of one vessel.
    #[arg(long)]
    vessel: Option<u32>,
}

#[derive(Args, Serialize)]
struct MetricsArgs {
    /// Voyages JSONL.
    #[arg(default_value = "-")]
    input: String,
    /// Directory for the report files; report JSON goes to stdout if absent.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args, Serialize)]
struct IngestArgs {
    /// `tcp://host:port` or `file:path`. Defaults to the endpoint environment variable.
    #[arg(long)]
    source: Option<String>,
    /// Replay time multiplier; 0 replays as fast as possible.
    #[arg(long, default_value_t = 0.0)]
    replay_speed: f64,
    /// Store directory; stored JSONL goes to stdout if absent.
    #[arg(long)]
    store: Option<PathBuf>,
    /// Stop a live feed after this many lines.
    #[arg(long)]
    max_lines: Option<u64>,
    /// Stop a live feed after this many seconds.
    #[arg(long)]
    max_seconds: Option<u64>,
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Scenario JSON; defaults apply to missing fields.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// NMEA output; stdout if absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Ground-truth JSONL.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write the scenario's port polygons as GeoJSON.
    #[arg(long)]
    port_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RunArgs {
    /// NMEA file, stored JSONL capture, store directory, or `-`.
    input: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    area: Option<String>,
    #[command(flatten)]
    validation: ValidationArgs,
    #[command(flatten)]
    report: ReportArgs,
    #[command(flatten)]
    quality: QualityArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Decode(a) => cmd_decode(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Voyages(a) => cmd_voyages(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Quality(m)) => {
            eprintln!("data quality: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn config_of(args: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_records<T: Serialize>(path: Option<&Path>, items: &[T], manifest: &mut RunManifest) -> Result<(), Failure> {
    let mut w = open_output(path)?;
    pipeline::write_jsonl(&mut w, items)?;
    w.flush()?;
    manifest.outputs.push(path.map_or("-".into(), |p| p.display().to_string()));
    Ok(())
}

fn finish(manifest: &RunManifest, output: Option<&Path>) -> Result<(), Failure> {
    manifest.write(output.map(sidecar).as_deref())?;
    Ok(())
}

fn check_quality(q: &QualityArgs, stats: &aisport::codec::DecodeStats) -> Result<(), Failure> {
    match q.max_error_rate {
        Some(max) if stats.error_rate() > max => Err(Failure::Quality(format!("{:.4} of lines rejected, above {max}", stats.error_rate()))),
        _ => Ok(()),
    }
}

fn parse_method(m: Option<&str>) -> Result<Option<Method>, Failure> {
    m.map(|m| m.parse::<Method>().map_err(|e| Failure::Usage(e.to_string()))).transpose()
}

fn cmd_decode(a: DecodeArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("decode", config_of(&a));
    let (lines, corrupt) = pipeline::read_lines(&a.input, &mut manifest.inputs)?;
    let decoded = pipeline::decode(&lines);
    write_records(a.output.as_deref(), &decoded.messages, &mut manifest)?;
    match &a.errors {
        Some(p) => write_records(Some(p), &decoded.errors, &mut manifest)?,
        None => {
            for e in &decoded.errors {
                eprintln!("{}", serde_json::to_string(e).expect("serializable"));
            }
        }
    }
    let s = &decoded.stats;
    eprintln!(
        "decoded {} lines: {} position, {} static, {} errors, {} corrupt stored lines",
        s.lines,
        s.positions,
        s.statics,
        s.error_count(),
        corrupt
    );
    finish(&manifest, a.output.as_deref())?;
    check_quality(&a.quality, s)
}

struct ValidationSetup {
    port: Option<aisport::PortGeometry>,
    cfg: aisport::ValidationConfig,
    training: Option<Vec<ValidatedMessage>>,
}

fn validation_setup(v: &ValidationArgs, inputs: &mut Vec<InputDigest>) -> Result<ValidationSetup, Failure> {
    let port = pipeline::load_port(v.port.as_deref(), inputs)?;
    let cfg = pipeline::load_config(v.config.as_deref(), parse_method(v.method.as_deref())?, inputs)?;
    let training = match &v.knn_train {
        Some(p) => {
            let records: Vec<Record> = pipeline::read_records(&p.to_string_lossy(), inputs)?;
            Some(records.into_iter().filter_map(|r| if let Record::Validated(v) = r { Some(v) } else { None }).collect())
        }
        None => None,
    };
    Ok(ValidationSetup { port, cfg, training })
}

fn report_agreement(s: &aisport::validate::ValidationSummary) {
    eprintln!("validated {} messages: agreement with reported status {:.4}, {} gap-flagged", s.messages, s.agreement_rate, s.gap_flagged);
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("validate", config_of(&a));
    let setup = validation_setup(&a.validation, &mut manifest.inputs)?;
    manifest.config["effective"] = serde_json::Value::String(setup.cfg.to_text());
    let input: Vec<Record> = pipeline::read_records(&a.input, &mut manifest.inputs)?;
    let out = pipeline::validate(input, setup.port.as_ref(), setup.training.as_deref(), &setup.cfg)?;
    write_records(a.output.as_deref(), &out.records, &mut manifest)?;
    report_agreement(&out.summary);
    finish(&manifest, a.output.as_deref())
}

fn cmd_voyages(a: VoyagesArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("voyages", config_of(&a));
    let area = pipeline::load_area(a.area.as_deref(), &mut manifest.inputs)?;
    let port = pipeline::load_port(a.port.as_deref(), &mut manifest.inputs)?;
    let cfg = pipeline::load_config(a.config.as_deref(), None, &mut manifest.inputs)?;
    let input: Vec<Record> = pipeline::read_records(&a.input, &mut manifest.inputs)?;
    let voyages = pipeline::voyages(input, &area, port.as_ref(), &cfg)?;
    write_records(a.output.as_deref(), &voyages, &mut manifest)?;
    eprintln!("{} voyages", voyages.len());
    finish(&manifest, a.output.as_deref())
}

fn metrics_options(r: &ReportArgs) -> Result<MetricsOptions, Failure> {
    let range = match (r.from, r.to) {
        (Some(f), Some(t)) if f <= t => Some((f, t)),
        (None, None) => None,
        _ => return Err(Failure::Usage("--from and --to must be given together, in order".into())),
    };
    let statistic: Statistic = r.statistic.parse().map_err(Failure::Usage)?;
    Ok(MetricsOptions { range, tz_offset_h: r.tz_offset, statistic })
}

fn load_truth(r: &ReportArgs, inputs: &mut Vec<InputDigest>) -> Result<Option<GroundTruthCalls>, Failure> {
    let Some(p) = &r.ground_truth else { return Ok(None) };
    let text = pipeline::read_text(p, inputs)?;
    Ok(Some(GroundTruthCalls::from_csv(text.as_bytes(), r.tz_offset)?))
}

/// Writes the report files into `dir`, returning their paths.
fn write_report_dir(dir: &Path, report: &MetricsReport, voyages: &[VoyageRecord], vessel: Option<u32>) -> Result<Vec<String>, Failure> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut file = |name: &str| -> Result<BufWriter<File>, Failure> {
        let p = dir.join(name);
        written.push(p.display().to_string());
        Ok(BufWriter::new(File::create(&p)?))
    };
    let mut w = file("report.json")?;
    serde_json::to_writer_pretty(&mut w, report).map_err(io::Error::other)?;
    w.write_all(b"\n")?;
    w.flush()?;
    report.daily_arrivals.write_csv(file("daily_arrivals.csv")?)?;
    write_weekly_csv(&report.weekly_turnaround, file("weekly_turnaround.csv")?)?;
    write_weekly_csv(&report.weekly_anchorage_wait, file("weekly_anchorage_wait.csv")?)?;
    write_voyage_metrics_csv(&report.per_voyage, file("voyage_metrics.csv")?)?;
    if let Some(mmsi) = vessel {
        write_schedule_csv(&schedule_table(voyages, mmsi), file(&format!("schedule-{mmsi}.csv"))?)?;
    }
    Ok(written)
}

fn print_mae(report: &MetricsReport) {
    if let Some(m) = &report.mae {
        let per: Vec<String> = m.per_category.iter().map(|(c, v)| format!("{c} {v:.3}")).collect();
        eprintln!("arrivals MAE over {} days: macro {:.3} ({})", m.dates, m.macro_average, per.join(", "));
    }
}

fn cmd_metrics(a: MetricsArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("metrics", config_of(&a));
    let options = metrics_options(&a.report)?;
    let truth = load_truth(&a.report, &mut manifest.inputs)?;
    let voyages: Vec<VoyageRecord> = pipeline::read_records(&a.input, &mut manifest.inputs)?;
    let input = MetricsInput { truth: truth.as_ref(), excluded: a.report.exclude_dates.iter().copied().collect::<BTreeSet<_>>(), options };
    let report = pipeline::metrics(&voyages, &input)?;
    print_mae(&report);
    match &a.out_dir {
        Some(dir) => {
            manifest.outputs = write_report_dir(dir, &report, &voyages, a.report.vessel)?;
            manifest.write(Some(&dir.join("manifest.json")))?;
        }
        None => {
            let mut out = io::stdout().lock();
            match a.report.vessel {
                Some(mmsi) => write_schedule_csv(&schedule_table(&voyages, mmsi), &mut out)?,
                None => {
                    serde_json::to_writer_pretty(&mut out, &report).map_err(io::Error::other)?;
                    out.write_all(b"\n")?;
                }
            }
            manifest.outputs.push("-".into());
            manifest.write(None)?;
        }
    }
    Ok(())
}

fn cmd_ingest(a: IngestArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("ingest", config_of(&a));
    let spec = match (&a.source, std::env::var(ENDPOINT_ENV)) {
        (Some(s), _) => s.clone(),
        (None, Ok(ep)) if !ep.is_empty() => format!("tcp://{}", ep.trim_start_matches("tcp://")),
        _ => return Err(Failure::Usage(format!("no --source given and {ENDPOINT_ENV} is unset"))),
    };
    let source: Source = spec.parse().map_err(|e: aisport::ingest::IngestError| Failure::Usage(e.to_string()))?;
    let mut cfg = SourceConfig::new(source).with_env_override();
    cfg.replay_speed = a.replay_speed;

    let mut store = a.store.as_ref().map(Store::open).transpose()?;
    let mut stdout = BufWriter::new(io::stdout().lock());
    let stop = Arc::new(AtomicBool::new(false));
    let mut count = 0u64;
    let mut sink = |l: StoredLine| -> io::Result<()> {
        count += 1;
        if a.max_lines.is_some_and(|m| count >= m) {
            stop.store(true, Ordering::Relaxed);
        }
        match store.as_mut() {
            Some(s) => s.append(&l),
            None => {
                serde_json::to_writer(&mut stdout, &l)?;
                stdout.write_all(b"\n")
            }
        }
    };
    let summary = match &cfg.source {
        Source::File(_) => run_replay(&cfg, &mut sink),
        Source::Tcp(_) => {
            if let Some(secs) = a.max_seconds {
                let stop = stop.clone();
                std::thread::spawn(move || {
                    std::thread::sleep(Duration::from_secs(secs));
                    stop.store(true, Ordering::Relaxed);
                });
            }
            run_live(&cfg, &mut sink, stop.clone())
        }
    }
    .map_err(|e| Failure::Usage(e.to_string()))?;
    stdout.flush()?;
    if let Some(s) = store.as_mut() {
        s.flush()?;
        manifest.outputs.push(s.root().display().to_string());
    }
    eprintln!(
        "ingested {} lines over {} connection(s), {} malformed, {} connection gaps",
        summary.lines,
        summary.connections,
        summary.malformed,
        summary.outages.len()
    );
    manifest.write(a.store.as_ref().map(|d| d.join("manifest.json")).as_deref())?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("synth", config_of(&a));
    let mut scenario: Scenario = match &a.scenario {
        Some(p) => {
            let text = pipeline::read_text(p, &mut manifest.inputs)?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => Scenario::default(),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    manifest.config["scenario"] = serde_json::to_value(&scenario).map_err(io::Error::other)?;
    let out = generate(&scenario).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut w = open_output(a.output.as_deref())?;
    for l in &out.lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    manifest.outputs.push(a.output.as_ref().map_or("-".into(), |p| p.display().to_string()));
    if let Some(p) = &a.truth {
        out.truth.write_jsonl(BufWriter::new(File::create(p)?))?;
        manifest.outputs.push(p.display().to_string());
    }
    if let Some(p) = &a.port_out {
        let text = serde_json::to_string_pretty(&builtin_port().to_geojson()).map_err(io::Error::other)?;
        fs::write(p, text + "\n")?;
        manifest.outputs.push(p.display().to_string());
    }
    eprintln!("{} lines, {} visits", out.lines.len(), out.truth.visits.len());
    finish(&manifest, a.output.as_deref())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let mut manifest = RunManifest::new("run", config_of(&a));
    let setup = validation_setup(&a.validation, &mut manifest.inputs)?;
    manifest.config["effective"] = serde_json::Value::String(setup.cfg.to_text());
    let area = pipeline::load_area(a.area.as_deref(), &mut manifest.inputs)?;
    let options = metrics_options(&a.report)?;
    let truth = load_truth(&a.report, &mut manifest.inputs)?;
    let (lines, _) = pipeline::read_lines(&a.input, &mut manifest.inputs)?;
    fs::create_dir_all(&a.out_dir)?;
    let path = |name: &str| a.out_dir.join(name);

    let decoded = pipeline::decode(&lines);
    let mut stage = RunManifest::new("run", serde_json::Value::Null);
    write_records(Some(&path("decoded.jsonl")), &decoded.messages, &mut stage)?;
    write_records(Some(&path("errors.jsonl")), &decoded.errors, &mut stage)?;
    let records: Vec<Record> = decoded.messages.into_iter().map(Record::from).collect();
    let validated = pipeline::validate(records, setup.port.as_ref(), setup.training.as_deref(), &setup.cfg)?;
    write_records(Some(&path("validated.jsonl")), &validated.records, &mut stage)?;
    report_agreement(&validated.summary);
    let voyages = pipeline::voyages(validated.records, &area, setup.port.as_ref(), &setup.cfg)?;
    write_records(Some(&path("voyages.jsonl")), &voyages, &mut stage)?;
    let input = MetricsInput { truth: truth.as_ref(), excluded: a.report.exclude_dates.iter().copied().collect(), options };
    let report = pipeline::metrics(&voyages, &input)?;
    print_mae(&report);
    stage.outputs.extend(write_report_dir(&a.out_dir, &report, &voyages, a.report.vessel)?);
    manifest.outputs = stage.outputs;
    manifest.write(Some(&path("manifest.json")))?;
    check_quality(&a.quality, &decoded.stats)
}
