//! Stage functions shared by the single-stage subcommands and `run`.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufReader, Read};
use std::path::Path;

use aisport::codec::{DecodeError, DecodeStats, Decoder, LineOutcome};
use aisport::ingest::{self, read_jsonl, replay_reader, Source, SourceConfig, Store, StoredLine};
use aisport::metrics::{build_report, GroundTruthCalls, MetricsOptions, MetricsReport};
use aisport::validate::{self, detect_outages, fit_knn, fit_knn_reports, Method, Outage, ValidationContext, ValidationSummary};
use aisport::voyage::{build_voyages, filter_area, ship_types, VoyageRecord};
use aisport::{AisMessage, AreaFilter, KnnModel, PortGeometry, PositionReport, StaticReport, ValidatedMessage, ValidationConfig};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::manifest::InputDigest;
use crate::Failure;

/// One line of the JSONL streams passed between stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Record {
    Position(PositionReport),
    Static(StaticReport),
    Validated(ValidatedMessage),
    Outage(Outage),
}

impl From<AisMessage> for Record {
    fn from(m: AisMessage) -> Self {
        match m {
            AisMessage::Position(p) => Record::Position(p),
            AisMessage::Static(s) => Record::Static(s),
        }
    }
}

fn read_bytes(path: &str) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    if path == "-" {
        io::stdin().read_to_end(&mut buf)?;
    } else {
        buf = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {path}: {e}")))?;
    }
    Ok(buf)
}

/// Reads NMEA input: a raw or stored-JSONL file, `-` for stdin, or a store
/// directory.
pub fn read_lines(path: &str, digests: &mut Vec<InputDigest>) -> Result<(Vec<StoredLine>, u64), Failure> {
    let cfg = SourceConfig::new(Source::File(path.into()));
    if path != "-" && Path::new(path).is_dir() {
        let mut lines = Vec::new();
        let mut corrupt = 0;
        for file in Store::files(Path::new(path))? {
            let bytes = fs::read(&file)?;
            digests.push(InputDigest::of(&file.to_string_lossy(), &bytes));
            let s = replay_reader(BufReader::new(bytes.as_slice()), &cfg, |l| {
                lines.push(l);
                Ok(())
            })
            .map_err(|e| Failure::Usage(e.to_string()))?;
            corrupt += s.malformed;
        }
        return Ok((lines, corrupt));
    }
    let bytes = read_bytes(path)?;
    digests.push(InputDigest::of(path, &bytes));
    let mut lines = Vec::new();
    let s = replay_reader(BufReader::new(bytes.as_slice()), &cfg, |l| {
        lines.push(l);
        Ok(())
    })
    .map_err(|e| Failure::Usage(e.to_string()))?;
    Ok((lines, s.malformed))
}

pub fn read_records<T: serde::de::DeserializeOwned>(path: &str, digests: &mut Vec<InputDigest>) -> Result<Vec<T>, Failure> {
    let bytes = read_bytes(path)?;
    digests.push(InputDigest::of(path, &bytes));
    read_jsonl(bytes.as_slice()).map_err(|e| Failure::Usage(format!("{path}: {e}")))
}

pub fn read_text(path: &Path, digests: &mut Vec<InputDigest>) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    digests.push(InputDigest::of(&path.to_string_lossy(), &bytes));
    String::from_utf8(bytes).map_err(|_| Failure::Usage(format!("{} is not UTF-8", path.display())))
}

pub struct Decoded {
    pub messages: Vec<AisMessage>,
    pub errors: Vec<DecodeError>,
    pub stats: DecodeStats,
}

pub fn decode(lines: &[StoredLine]) -> Decoded {
    let mut decoder = Decoder::default();
    let mut messages = Vec::new();
    let mut errors = Vec::new();
    for (i, l) in lines.iter().enumerate() {
        match decoder.feed(&l.nmea, l.rx_time) {
            LineOutcome::Message(m) => messages.push(m),
            LineOutcome::Error(e) => errors.push(e),
            LineOutcome::Fragment | LineOutcome::Unsupported(_) => {}
        }
        if i % 1024 == 1023 {
            errors.extend(decoder.take_dropped(l.rx_time));
        }
    }
    errors.extend(decoder.finish());
    Decoded { messages, errors, stats: decoder.stats().clone() }
}

pub fn load_port(path: Option<&Path>, digests: &mut Vec<InputDigest>) -> Result<Option<PortGeometry>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let text = read_text(path, digests)?;
    PortGeometry::from_geojson(&text).map(Some).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

pub fn load_config(path: Option<&Path>, method: Option<Method>, digests: &mut Vec<InputDigest>) -> Result<ValidationConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ValidationConfig::parse(&read_text(p, digests)?).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => ValidationConfig::default(),
    };
    if let Some(m) = method {
        cfg.method = m;
    }
    cfg.check().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Accepts an area spec (`all`, `circle:...`, `bbox:...`) or a GeoJSON file.
pub fn load_area(spec: Option<&str>, digests: &mut Vec<InputDigest>) -> Result<AreaFilter, Failure> {
    match spec {
        None => Ok(AreaFilter::All),
        Some(s) if Path::new(s).is_file() => {
            let text = read_text(Path::new(s), digests)?;
            AreaFilter::from_geojson(&text).map_err(|e| Failure::Usage(format!("{s}: {e}")))
        }
        Some(s) => s.parse().map_err(|e| Failure::Usage(format!("{e}"))),
    }
}

pub struct Validated {
    pub records: Vec<Record>,
    pub summary: ValidationSummary,
}

/// Corrects every position report. Statics pass through in place; detected
/// outages are prepended. The ensemble method fits its k-NN fallback from
/// `training` or, failing that, from the stream's own stopped reports when
/// there are enough of them.
pub fn validate(
    input: Vec<Record>,
    port: Option<&PortGeometry>,
    training: Option<&[ValidatedMessage]>,
    cfg: &ValidationConfig,
) -> Result<Validated, Failure> {
    let positions: Vec<PositionReport> = input
        .iter()
        .filter_map(|r| match r {
            Record::Position(p) => Some(p.clone()),
            Record::Validated(v) => Some(v.report.clone()),
            _ => None,
        })
        .collect();
    let outages = match positions.iter().map(|p| p.timestamp).max() {
        Some(now) => detect_outages(&positions, now, &cfg.outages),
        None => Vec::new(),
    };
    let fitted: Result<KnnModel, validate::ValidateError> = match training {
        Some(t) => fit_knn(t, cfg.knn_k, cfg.stopped_threshold_kn),
        None => fit_knn_reports(&positions, cfg.knn_k, cfg.stopped_threshold_kn),
    };
    let knn = match (cfg.method, fitted) {
        (Method::Knn, Err(e)) => return Err(Failure::Usage(format!("cannot fit k-NN model: {e}"))),
        (Method::Knn | Method::Ensemble, Ok(m)) => Some(m),
        _ => None,
    };
    let ctx = ValidationContext { port, knn: knn.as_ref(), outages: &outages };
    let validated = validate::validate_stream(&positions, &ctx, cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    let summary = validate::summarize(&validated);
    let mut validated = validated.into_iter();
    let mut records: Vec<Record> = outages.into_iter().map(Record::Outage).collect();
    for r in input {
        match r {
            Record::Position(_) | Record::Validated(_) => records.push(Record::Validated(validated.next().expect("one per position"))),
            Record::Static(s) => records.push(Record::Static(s)),
            Record::Outage(_) => {}
        }
    }
    Ok(Validated { records, summary })
}

pub fn voyages(
    input: Vec<Record>,
    area: &AreaFilter,
    port: Option<&PortGeometry>,
    cfg: &ValidationConfig,
) -> Result<Vec<VoyageRecord>, Failure> {
    let mut messages = Vec::new();
    let mut statics = Vec::new();
    let mut outages = Vec::new();
    for r in input {
        match r {
            Record::Validated(v) => messages.push(v),
            Record::Static(s) => statics.push(s),
            Record::Outage(o) => outages.push(o),
            Record::Position(_) => return Err(Failure::Usage("input holds unvalidated position reports; run `validate` first".into())),
        }
    }
    let types = ship_types(&statics);
    let voyages = build_voyages(filter_area(messages, area), port, &outages, cfg.outages.cell_deg);
    Ok(voyages.iter().map(|v| v.record(types.get(&v.mmsi).copied())).collect())
}

pub struct MetricsInput<'a> {
    pub truth: Option<&'a GroundTruthCalls>,
    pub excluded: BTreeSet<NaiveDate>,
    pub options: MetricsOptions,
}

pub fn metrics(voyages: &[VoyageRecord], input: &MetricsInput<'_>) -> Result<MetricsReport, Failure> {
    build_report(voyages, input.truth.map(|t| (t, &input.excluded)), &input.options).map_err(|e| Failure::Usage(e.to_string()))
}

pub fn write_jsonl<T: Serialize>(w: impl io::Write, items: &[T]) -> io::Result<()> {
    ingest::write_jsonl(w, items)
}
