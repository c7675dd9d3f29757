//! Navigational-status correction.
//!
//! Three independent classifiers decide whether a stopped vessel is at
//! anchor or moored: polygon membership ([`classify_geofence`]), heading
//! rotation over a trailing window ([`classify_kinematic`]) and a location
//! k-NN vote ([`knn::KnnModel`]). [`validate_stream`] applies one of them, or
//! an ensemble, to a whole stream and smooths the result per vessel.

pub mod knn;
mod outage;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CorrectedStatus, PositionReport};
use crate::geo::{encode_heading, mean_resultant_length};
use crate::{KnnModel, PortGeometry};

pub use outage::{detect_outages, GridCell, Outage, OutageConfig, OutageScope};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidateError {
    #[error("speed over ground not available")]
    UnavailableSpeed,
    #[error("heading not available for at least half of the window")]
    UnavailableHeading,
    #[error("stopped window spans {span_s} s, shorter than required")]
    InsufficientWindow { span_s: i64 },
    #[error("{points} training points is fewer than k = {k}")]
    TooFewPoints { points: usize, k: usize },
    #[error("training label must be 1 or 5, got {0}")]
    InvalidLabel(u8),
    #[error("geofence method requires anchorage or terminal polygons")]
    MissingPolygons,
    #[error("knn method requires a fitted model")]
    MissingModel,
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Geofence,
    Kinematic,
    Knn,
    /// Containing polygon, then heading rotation, then k-NN.
    Ensemble,
}

impl FromStr for Method {
    type Err = ValidateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geofence" => Ok(Method::Geofence),
            "kinematic" => Ok(Method::Kinematic),
            "knn" => Ok(Method::Knn),
            "ensemble" => Ok(Method::Ensemble),
            other => Err(ValidateError::Config(format!("unknown method {other:?}"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Geofence => "geofence",
            Method::Kinematic => "kinematic",
            Method::Knn => "knn",
            Method::Ensemble => "ensemble",
        })
    }
}

/// Which classifier produced a corrected status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionMethod {
    Geofence,
    Kinematic,
    Knn,
    Reported,
}

impl CorrectionMethod {
    pub fn name(self) -> &'static str {
        match self {
            CorrectionMethod::Geofence => "geofence",
            CorrectionMethod::Kinematic => "kinematic",
            CorrectionMethod::Knn => "knn",
            CorrectionMethod::Reported => "reported",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub method: Method,
    pub stopped_threshold_kn: f64,
    pub knn_k: usize,
    pub rotation_window_h: f64,
    pub rotation_rbar: f64,
    pub hysteresis_msgs: usize,
    pub hysteresis_min: f64,
    pub outages: OutageConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            method: Method::Ensemble,
            stopped_threshold_kn: 0.5,
            knn_k: knn::DEFAULT_K,
            rotation_window_h: 3.0,
            rotation_rbar: 0.98,
            hysteresis_msgs: 2,
            hysteresis_min: 10.0,
            outages: OutageConfig::default(),
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ValidateError> {
    v.parse().map_err(|_| ValidateError::Config(format!("{key}: cannot parse {v:?}")))
}

fn minutes(m: f64) -> TimeDelta {
    TimeDelta::milliseconds((m * 60_000.0).round() as i64)
}

impl ValidationConfig {
    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ValidateError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| ValidateError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "method" => cfg.method = value.parse()?,
                "stopped_threshold_kn" => cfg.stopped_threshold_kn = parse_num(key, value)?,
                "knn_k" => cfg.knn_k = parse_num(key, value)?,
                "rotation_window_h" => cfg.rotation_window_h = parse_num(key, value)?,
                "rotation_rbar" => cfg.rotation_rbar = parse_num(key, value)?,
                "hysteresis_msgs" => cfg.hysteresis_msgs = parse_num(key, value)?,
                "hysteresis_min" => cfg.hysteresis_min = parse_num(key, value)?,
                "outage_global_min" => cfg.outages.global_gap = minutes(parse_num(key, value)?),
                "outage_vessel_min" => cfg.outages.vessel_gap = minutes(parse_num(key, value)?),
                "outage_cadence_min" => cfg.outages.vessel_cadence = minutes(parse_num(key, value)?),
                "outage_area_min" => cfg.outages.area_gap = minutes(parse_num(key, value)?),
                "outage_cell_deg" => cfg.outages.cell_deg = parse_num(key, value)?,
                other => return Err(ValidateError::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ValidateError> {
        let bad = |m: &str| Err(ValidateError::Config(m.to_string()));
        if !(self.stopped_threshold_kn > 0.0) {
            return bad("stopped_threshold_kn must be positive");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if !(self.rotation_window_h > 0.0) {
            return bad("rotation_window_h must be positive");
        }
        if !(self.rotation_rbar > 0.0 && self.rotation_rbar <= 1.0) {
            return bad("rotation_rbar must lie in (0, 1]");
        }
        if self.hysteresis_msgs == 0 {
            return bad("hysteresis_msgs must be at least 1");
        }
        if !(self.hysteresis_min >= 0.0) {
            return bad("hysteresis_min must be non-negative");
        }
        if !(self.outages.cell_deg > 0.0) {
            return bad("outage_cell_deg must be positive");
        }
        Ok(())
    }

    /// Renders the configuration in the format accepted by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let m = |d: TimeDelta| d.num_milliseconds() as f64 / 60_000.0;
        format!(
            "method = {}\nstopped_threshold_kn = {}\nknn_k = {}\nrotation_window_h = {}\nrotation_rbar = {}\n\
             hysteresis_msgs = {}\nhysteresis_min = {}\noutage_global_min = {}\noutage_vessel_min = {}\n\
             outage_cadence_min = {}\noutage_area_min = {}\noutage_cell_deg = {}\n",
            self.method,
            self.stopped_threshold_kn,
            self.knn_k,
            self.rotation_window_h,
            self.rotation_rbar,
            self.hysteresis_msgs,
            self.hysteresis_min,
            m(self.outages.global_gap),
            m(self.outages.vessel_gap),
            m(self.outages.vessel_cadence),
            m(self.outages.area_gap),
            self.outages.cell_deg,
        )
    }

    fn rotation_window(&self) -> TimeDelta {
        minutes(self.rotation_window_h * 60.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedMessage {
    pub report: PositionReport,
    pub corrected_navstat: CorrectedStatus,
    pub method: CorrectionMethod,
    /// Reported status, mapped onto {0, 1, 5}, equals the corrected one.
    pub agreed_with_reported: bool,
    /// An applicable outage lies between this and the vessel's previous message.
    pub gap_flag: bool,
}

pub fn is_stopped(report: &PositionReport, threshold_kn: f64) -> Result<bool, ValidateError> {
    report.sog.map(|s| s < threshold_kn).ok_or(ValidateError::UnavailableSpeed)
}

pub fn classify_geofence(report: &PositionReport, port: &PortGeometry, threshold_kn: f64) -> Result<CorrectedStatus, ValidateError> {
    if !is_stopped(report, threshold_kn)? {
        return Ok(CorrectedStatus::Underway);
    }
    let p = report.position();
    Ok(if port.terminal_at(p).is_some() {
        CorrectedStatus::Moored
    } else if port.anchorage_at(p).is_some() {
        CorrectedStatus::AtAnchor
    } else {
        CorrectedStatus::Underway
    })
}

/// Anchored if headings are spread (resultant length below `rbar`), moored if
/// they are concentrated.
fn rotation_status<I>(headings: I, rbar: f64) -> Result<CorrectedStatus, ValidateError>
where
    I: Iterator<Item = Option<u16>> + Clone,
{
    let total = headings.clone().count();
    let encoded: Vec<_> = headings.flatten().map(|h| encode_heading(Some(f64::from(h))).expect("heading present")).collect();
    if encoded.is_empty() || 2 * encoded.len() < total {
        return Err(ValidateError::UnavailableHeading);
    }
    let r = mean_resultant_length(encoded).expect("non-empty");
    Ok(if r < rbar { CorrectedStatus::AtAnchor } else { CorrectedStatus::Moored })
}

/// Classifies the last report of a time-ordered single-vessel window.
///
/// The trailing run of stopped reports must span the configured rotation
/// window; only reports inside that window ending at the last one are used.
pub fn classify_kinematic(window: &[PositionReport], cfg: &ValidationConfig) -> Result<CorrectedStatus, ValidateError> {
    let last = window.last().ok_or(ValidateError::InsufficientWindow { span_s: 0 })?;
    if !is_stopped(last, cfg.stopped_threshold_kn)? {
        return Ok(CorrectedStatus::Underway);
    }
    let mut start = window.len() - 1;
    while start > 0 && matches!(is_stopped(&window[start - 1], cfg.stopped_threshold_kn), Ok(true)) {
        start -= 1;
    }
    let span = last.timestamp - window[start].timestamp;
    if span < cfg.rotation_window() {
        return Err(ValidateError::InsufficientWindow { span_s: span.num_seconds() });
    }
    let from = last.timestamp - cfg.rotation_window();
    let first = start + window[start..].partition_point(|r| r.timestamp < from);
    rotation_status(window[first..].iter().map(|r| r.heading), cfg.rotation_rbar)
}

pub fn classify_knn(model: &KnnModel, report: &PositionReport, threshold_kn: f64) -> Result<CorrectedStatus, ValidateError> {
    if !is_stopped(report, threshold_kn)? {
        return Ok(CorrectedStatus::Underway);
    }
    Ok(model.predict(report.position()))
}

/// Fits a k-NN model on stopped reports whose reported status is 1 or 5,
/// labelled with that reported status.
pub fn fit_knn_reports<'a, I>(history: I, k: usize, threshold_kn: f64) -> Result<KnnModel, ValidateError>
where
    I: IntoIterator<Item = &'a PositionReport>,
{
    let samples: Vec<_> = history
        .into_iter()
        .filter(|r| matches!(is_stopped(r, threshold_kn), Ok(true)))
        .filter_map(|r| {
            let label = r.navstat.to_corrected();
            label.is_stopped().then(|| (r.position(), label))
        })
        .collect();
    KnnModel::fit(&samples, k)
}

/// Fits a k-NN model on stopped messages of a validated history, labelled
/// with their corrected status.
pub fn fit_knn(history: &[ValidatedMessage], k: usize, threshold_kn: f64) -> Result<KnnModel, ValidateError> {
    let samples: Vec<_> = history
        .iter()
        .filter(|m| m.corrected_navstat.is_stopped() && matches!(is_stopped(&m.report, threshold_kn), Ok(true)))
        .map(|m| (m.report.position(), m.corrected_navstat))
        .collect();
    KnnModel::fit(&samples, k)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidationContext<'a> {
    pub port: Option<&'a PortGeometry>,
    pub knn: Option<&'a KnnModel>,
    pub outages: &'a [Outage],
}

impl ValidationContext<'_> {
    fn polygons(&self) -> Option<&PortGeometry> {
        self.port.filter(|p| !p.is_empty())
    }
}

/// Suppresses status runs shorter than `min_msgs` messages and `min_dur`.
/// A suppressed run keeps the preceding status; a confirmed run is emitted
/// from its first message.
fn apply_hysteresis(times: &[DateTime<Utc>], raw: &[CorrectedStatus], min_msgs: usize, min_dur: TimeDelta) -> Vec<CorrectedStatus> {
    let mut out = raw.to_vec();
    let Some(&first) = raw.first() else { return out };
    let mut current = first;
    let mut i = 0;
    while i < raw.len() {
        let mut j = i;
        while j < raw.len() && raw[j] == raw[i] {
            j += 1;
        }
        if raw[i] != current && (j - i >= min_msgs || times[j - 1] - times[i] >= min_dur) {
            current = raw[i];
        }
        out[i..j].fill(current);
        i = j;
    }
    out
}

/// Kinematic verdict per message of one vessel; `None` where no verdict exists.
/// Messages in the first window of a long stop take the verdict of the first
/// message with a full window.
fn kinematic_track(track: &[&PositionReport], cfg: &ValidationConfig) -> Vec<Option<CorrectedStatus>> {
    let stopped: Vec<Option<bool>> = track.iter().map(|r| is_stopped(r, cfg.stopped_threshold_kn).ok()).collect();
    let mut out = vec![None; track.len()];
    let w = cfg.rotation_window();
    let mut i = 0;
    while i < track.len() {
        match stopped[i] {
            Some(false) => {
                out[i] = Some(CorrectedStatus::Underway);
                i += 1;
            }
            None => i += 1,
            Some(true) => {
                let a = i;
                let mut b = i;
                while b < track.len() && stopped[b] == Some(true) {
                    b += 1;
                }
                let mut lo = a;
                let mut first_full = None;
                for k in a..b {
                    let t = track[k].timestamp;
                    if t - track[a].timestamp < w {
                        continue;
                    }
                    while track[lo].timestamp < t - w {
                        lo += 1;
                    }
                    out[k] = rotation_status(track[lo..=k].iter().map(|r| r.heading), cfg.rotation_rbar).ok();
                    first_full.get_or_insert(k);
                }
                if let Some(f) = first_full {
                    let v = out[f];
                    out[a..f].fill(v);
                }
                i = b;
            }
        }
    }
    out
}

fn validate_track(
    track: &[&PositionReport],
    ctx: &ValidationContext<'_>,
    cfg: &ValidationConfig,
) -> Vec<(CorrectedStatus, CorrectionMethod, bool)> {
    let threshold = cfg.stopped_threshold_kn;
    let kin = match cfg.method {
        Method::Kinematic | Method::Ensemble => kinematic_track(track, cfg),
        _ => vec![None; track.len()],
    };
    let port = ctx.polygons();
    let moving_method = if port.is_some() { CorrectionMethod::Geofence } else { CorrectionMethod::Kinematic };

    let raw: Vec<(CorrectedStatus, CorrectionMethod)> = track
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let reported = (r.navstat.to_corrected(), CorrectionMethod::Reported);
            let Ok(stopped) = is_stopped(r, threshold) else { return reported };
            let geo = || port.map(|p| classify_geofence(r, p, threshold).expect("speed available"));
            let knn = || ctx.knn.map(|m| classify_knn(m, r, threshold).expect("speed available"));
            match cfg.method {
                Method::Geofence => geo().map_or(reported, |s| (s, CorrectionMethod::Geofence)),
                Method::Knn => knn().map_or(reported, |s| (s, CorrectionMethod::Knn)),
                Method::Kinematic => kin[i].map_or(reported, |s| (s, CorrectionMethod::Kinematic)),
                Method::Ensemble if !stopped => (CorrectedStatus::Underway, moving_method),
                Method::Ensemble => {
                    if let Some(s) = geo().filter(|s| s.is_stopped()) {
                        (s, CorrectionMethod::Geofence)
                    } else if let Some(s) = kin[i] {
                        (s, CorrectionMethod::Kinematic)
                    } else if let Some(s) = knn() {
                        (s, CorrectionMethod::Knn)
                    } else if port.is_some() {
                        (CorrectedStatus::Underway, CorrectionMethod::Geofence)
                    } else {
                        reported
                    }
                }
            }
        })
        .collect();

    let times: Vec<_> = track.iter().map(|r| r.timestamp).collect();
    let statuses: Vec<_> = raw.iter().map(|&(s, _)| s).collect();
    let smoothed = apply_hysteresis(&times, &statuses, cfg.hysteresis_msgs, minutes(cfg.hysteresis_min));

    // Outages relevant to this track, sorted by start, with running max of ends.
    let mmsi = track.first().map(|r| r.mmsi);
    let mut relevant: Vec<&Outage> = ctx.outages.iter().filter(|o| o.scope != OutageScope::Vessel || o.mmsi == mmsi).collect();
    relevant.sort_by_key(|o| (o.start, o.end));
    let mut max_end = Vec::with_capacity(relevant.len());
    for o in &relevant {
        let prev = max_end.last().copied().unwrap_or(o.end);
        max_end.push(o.end.max(prev));
    }
    let gap_flag = |i: usize| -> bool {
        if i == 0 {
            return false;
        }
        let (prev, cur) = (track[i - 1], track[i]);
        let mut k = relevant.partition_point(|o| o.start < cur.timestamp);
        while k > 0 && max_end[k - 1] > prev.timestamp {
            k -= 1;
            let o = relevant[k];
            if o.overlaps(prev.timestamp, cur.timestamp) && o.applies_to(prev.mmsi, prev.position(), cfg.outages.cell_deg) {
                return true;
            }
        }
        false
    };

    (0..track.len()).map(|i| (smoothed[i], raw[i].1, gap_flag(i))).collect()
}

/// Corrects the status of every report. Output order matches input order.
///
/// Messages are grouped by MMSI and processed in timestamp order per vessel;
/// vessels run in parallel. Reports without speed keep their reported status
/// with method `reported`, as do reports a single-method run cannot classify.
pub fn validate_stream(
    stream: &[PositionReport],
    ctx: &ValidationContext<'_>,
    cfg: &ValidationConfig,
) -> Result<Vec<ValidatedMessage>, ValidateError> {
    cfg.check()?;
    match cfg.method {
        Method::Geofence if ctx.polygons().is_none() => return Err(ValidateError::MissingPolygons),
        Method::Knn if ctx.knn.is_none() => return Err(ValidateError::MissingModel),
        _ => {}
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in stream.iter().enumerate() {
        groups.entry(r.mmsi).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut idx| {
            idx.sort_by_key(|&i| (stream[i].timestamp, i));
            idx
        })
        .collect();
    let results: Vec<Vec<(CorrectedStatus, CorrectionMethod, bool)>> = groups
        .par_iter()
        .map(|idx| {
            let track: Vec<&PositionReport> = idx.iter().map(|&i| &stream[i]).collect();
            validate_track(&track, ctx, cfg)
        })
        .collect();

    let mut out: Vec<Option<ValidatedMessage>> = vec![None; stream.len()];
    for (idx, res) in groups.iter().zip(results) {
        for (&i, (status, method, gap_flag)) in idx.iter().zip(res) {
            let report = stream[i].clone();
            let agreed_with_reported = report.navstat.to_corrected() == status;
            out[i] = Some(ValidatedMessage { report, corrected_navstat: status, method, agreed_with_reported, gap_flag });
        }
    }
    Ok(out.into_iter().map(|m| m.expect("every message assigned")).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub messages: u64,
    pub agreed: u64,
    pub agreement_rate: f64,
    pub gap_flagged: u64,
    pub by_method: BTreeMap<String, u64>,
    pub by_status: BTreeMap<u8, u64>,
}

pub fn summarize(messages: &[ValidatedMessage]) -> ValidationSummary {
    let mut s = ValidationSummary { messages: messages.len() as u64, ..Default::default() };
    for m in messages {
        s.agreed += u64::from(m.agreed_with_reported);
        s.gap_flagged += u64::from(m.gap_flag);
        *s.by_method.entry(m.method.name().to_string()).or_default() += 1;
        *s.by_status.entry(m.corrected_navstat.code()).or_default() += 1;
    }
    s.agreement_rate = if s.messages == 0 { 1.0 } else { s.agreed as f64 / s.messages as f64 };
    s
}
