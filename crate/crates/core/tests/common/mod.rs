//! Pipeline glue shared by the integration tests.
#![allow(dead_code)]

use aisport::codec::{Decoder, LineOutcome};
use aisport::ingest::StoredLine;
use aisport::metrics::{build_report, MetricsOptions, MetricsReport};
use aisport::synth::{builtin_area, builtin_port, SynthOutput, TruthLog};
use aisport::validate::{detect_outages, fit_knn_reports, validate_stream, Method, Outage, ValidationContext};
use aisport::voyage::{build_voyages, filter_area, ship_types, VoyageRecord};
use aisport::{AisMessage, AreaFilter, CorrectedStatus, PortGeometry, PositionReport, StaticReport, ValidatedMessage, ValidationConfig};
use chrono::{DateTime, Utc};

pub struct Decoded {
    pub positions: Vec<PositionReport>,
    pub statics: Vec<StaticReport>,
    pub errors: usize,
}

pub fn decode_lines<'a>(lines: impl IntoIterator<Item = (&'a str, DateTime<Utc>)>) -> Decoded {
    let mut d = Decoder::default();
    let mut out = Decoded { positions: Vec::new(), statics: Vec::new(), errors: 0 };
    for (line, rx) in lines {
        match d.feed(line, rx) {
            LineOutcome::Message(AisMessage::Position(p)) => out.positions.push(p),
            LineOutcome::Message(AisMessage::Static(s)) => out.statics.push(s),
            LineOutcome::Error(_) => out.errors += 1,
            _ => {}
        }
    }
    out.errors += d.finish().len();
    out
}

pub fn decode_stored(lines: &[StoredLine]) -> Decoded {
    decode_lines(lines.iter().map(|l| (l.nmea.as_str(), l.rx_time)))
}

pub fn decode_synth(out: &SynthOutput) -> Decoded {
    decode_lines(out.lines.iter().map(|l| (l.as_str(), DateTime::UNIX_EPOCH)))
}

pub struct Pipeline {
    pub outages: Vec<Outage>,
    pub validated: Vec<ValidatedMessage>,
    pub voyages: Vec<VoyageRecord>,
    pub report: MetricsReport,
}

/// Validation, voyages and metrics as the `run` subcommand wires them.
pub fn run(decoded: &Decoded, port: Option<&PortGeometry>, area: &AreaFilter, cfg: &ValidationConfig) -> Pipeline {
    let positions = &decoded.positions;
    let outages = match positions.iter().map(|p| p.timestamp).max() {
        Some(now) => detect_outages(positions, now, &cfg.outages),
        None => Vec::new(),
    };
    let knn = match cfg.method {
        Method::Knn | Method::Ensemble => fit_knn_reports(positions, cfg.knn_k, cfg.stopped_threshold_kn).ok(),
        _ => None,
    };
    let ctx = ValidationContext { port, knn: knn.as_ref(), outages: &outages };
    let validated = validate_stream(positions, &ctx, cfg).expect("validation succeeds");
    let types = ship_types(&decoded.statics);
    let voyages: Vec<VoyageRecord> = build_voyages(filter_area(validated.clone(), area), port, &outages, cfg.outages.cell_deg)
        .iter()
        .map(|v| v.record(types.get(&v.mmsi).copied()))
        .collect();
    let report = build_report(&voyages, None, &MetricsOptions::default()).expect("report builds");
    Pipeline { outages, validated, voyages, report }
}

pub fn run_builtin(decoded: &Decoded, method: Method) -> Pipeline {
    let port = builtin_port();
    let cfg = ValidationConfig { method, ..Default::default() };
    let port = (method != Method::Kinematic).then_some(&port);
    run(decoded, port, &builtin_area(), &cfg)
}

/// Share of `validated` matching the true status, over messages `keep` accepts.
pub fn accuracy(validated: &[ValidatedMessage], truth: &TruthLog, keep: impl Fn(&ValidatedMessage) -> bool) -> (f64, usize) {
    let index = truth.status_index();
    let mut n = 0;
    let mut right = 0;
    for m in validated.iter().filter(|m| keep(m)) {
        let Some(&t) = index.get(&(m.report.mmsi, m.report.timestamp)) else { continue };
        n += 1;
        right += usize::from(t == m.corrected_navstat);
    }
    (if n == 0 { f64::NAN } else { right as f64 / n as f64 }, n)
}

/// Whether `m` falls inside a true stop phase whose duration satisfies `pred`.
pub fn in_stop(truth: &TruthLog, pred: impl Fn(i64) -> bool) -> impl Fn(&ValidatedMessage) -> bool + '_ {
    let mut stops: std::collections::HashMap<u32, Vec<_>> = std::collections::HashMap::new();
    for v in &truth.visits {
        for p in &v.phases {
            if p.kind != aisport::PhaseKind::Underway && pred(p.duration().num_seconds()) {
                stops.entry(v.mmsi).or_default().push((p.start, p.end));
            }
        }
    }
    move |m: &ValidatedMessage| {
        stops.get(&m.report.mmsi).is_some_and(|s| s.iter().any(|&(a, b)| a <= m.report.timestamp && m.report.timestamp < b))
    }
}

pub fn status_counts(v: &[ValidatedMessage]) -> [usize; 3] {
    let mut c = [0; 3];
    for m in v {
        c[CorrectedStatus::ALL.iter().position(|&s| s == m.corrected_navstat).unwrap()] += 1;
    }
    c
}
