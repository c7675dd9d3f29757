//! Port and vessel efficiency metrics computed from voyage records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::haversine_m;
use crate::voyage::{Phase, PhaseKind, VoyageRecord};

/// Moored phases closer than this, at the same terminal, form one stay.
pub const MOORING_MERGE_GAP: TimeDelta = TimeDelta::hours(1);
/// Without terminal polygons, moored phases this close count as one berth.
pub const SAME_BERTH_M: f64 = 500.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no dates shared by prediction and ground truth")]
    EmptyOverlap,
    #[error("ground truth: {0}")]
    GroundTruth(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselCategory {
    Cargo,
    Tanker,
    Passenger,
    Other,
}

impl VesselCategory {
    pub const ALL: [VesselCategory; 4] = [VesselCategory::Cargo, VesselCategory::Tanker, VesselCategory::Passenger, VesselCategory::Other];

    /// Unknown ship types count as `Other`.
    pub fn from_ship_type(ship_type: Option<u8>) -> Self {
        match ship_type {
            Some(70..=79) => VesselCategory::Cargo,
            Some(80..=89) => VesselCategory::Tanker,
            Some(40..=49 | 60..=69) => VesselCategory::Passenger,
            _ => VesselCategory::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VesselCategory::Cargo => "cargo",
            VesselCategory::Tanker => "tanker",
            VesselCategory::Passenger => "passenger",
            VesselCategory::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VesselCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VesselCategory {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VesselCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| MetricsError::GroundTruth(format!("unknown category {s:?}")))
    }
}

mod seconds {
    use chrono::TimeDelta;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &TimeDelta, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(d.num_seconds())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TimeDelta, D::Error> {
        i64::deserialize(d).map(TimeDelta::seconds)
    }
}

/// Formats a duration as `D days HH:MM:SS`.
pub fn format_duration(d: TimeDelta) -> String {
    let sign = if d < TimeDelta::zero() { "-" } else { "" };
    let s = d.num_seconds().abs();
    format!("{sign}{} days {:02}:{:02}:{:02}", s / 86_400, s % 86_400 / 3600, s % 3600 / 60, s % 60)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnaroundRecord {
    pub mmsi: u32,
    pub terminal_name: Option<String>,
    pub arrival: DateTime<Utc>,
    pub departure: DateTime<Utc>,
    #[serde(rename = "turnaround_s", with = "seconds")]
    pub turnaround: TimeDelta,
}

fn same_berth(a: &Phase, b: &Phase) -> bool {
    match (&a.terminal, &b.terminal) {
        (Some(x), Some(y)) => x == y,
        (None, None) => haversine_m(a.location, b.location) <= SAME_BERTH_M,
        _ => false,
    }
}

/// Time from the start of the first moored phase to the end of that stay.
/// Later moored phases join the stay when only underway time shorter than
/// an hour separates them and they are at the same terminal.
pub fn turnaround(v: &VoyageRecord) -> Option<TurnaroundRecord> {
    let phases = &v.phases;
    let first = phases.iter().position(|p| p.kind == PhaseKind::Moored)?;
    let mut last = first;
    let mut k = first + 1;
    while k < phases.len() {
        match phases[k].kind {
            PhaseKind::Underway => k += 1,
            PhaseKind::Anchored => break,
            PhaseKind::Moored => {
                if phases[k].start - phases[last].end < MOORING_MERGE_GAP && same_berth(&phases[first], &phases[k]) {
                    last = k;
                    k += 1;
                } else {
                    break;
                }
            }
        }
    }
    let (arrival, departure) = (phases[first].start, phases[last].end);
    Some(TurnaroundRecord {
        mmsi: v.mmsi,
        terminal_name: phases[first].terminal.clone(),
        arrival,
        departure,
        turnaround: departure - arrival,
    })
}

/// Anchored time before the first moored phase; all anchored time if the
/// vessel never moored.
pub fn anchorage_wait(v: &VoyageRecord) -> TimeDelta {
    let berth = v.phases.iter().position(|p| p.kind == PhaseKind::Moored).unwrap_or(v.phases.len());
    v.phases[..berth].iter().filter(|p| p.kind == PhaseKind::Anchored).map(Phase::duration).sum()
}

/// Total underway time and mean underway speed, weighted by the number of
/// speed samples per phase.
pub fn movement_stats(v: &VoyageRecord) -> (TimeDelta, Option<f64>) {
    let underway = v.phases.iter().filter(|p| p.kind == PhaseKind::Underway);
    let duration = underway.clone().map(Phase::duration).sum();
    let (sum, n) = underway
        .filter_map(|p| p.mean_sog.map(|s| (s * p.sog_count as f64, p.sog_count)))
        .fold((0.0, 0usize), |(a, b), (s, n)| (a + s, b + n));
    (duration, (n > 0).then(|| sum / n as f64))
}

/// Per-voyage metrics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoyageMetrics {
    pub mmsi: u32,
    pub category: VesselCategory,
    pub arrival: DateTime<Utc>,
    pub departure: DateTime<Utc>,
    pub terminal: Option<String>,
    pub berth_arrival: Option<DateTime<Utc>>,
    pub berth_departure: Option<DateTime<Utc>>,
    pub turnaround_s: Option<i64>,
    pub anchorage_wait_s: i64,
    pub underway_s: i64,
    pub mean_underway_sog: Option<f64>,
    pub gap_flagged: bool,
}

pub fn voyage_metrics(v: &VoyageRecord) -> VoyageMetrics {
    let t = turnaround(v);
    let (underway, sog) = movement_stats(v);
    VoyageMetrics {
        mmsi: v.mmsi,
        category: v.category,
        arrival: v.arrival,
        departure: v.departure,
        terminal: t.as_ref().and_then(|t| t.terminal_name.clone()),
        berth_arrival: t.as_ref().map(|t| t.arrival),
        berth_departure: t.as_ref().map(|t| t.departure),
        turnaround_s: t.as_ref().map(|t| t.turnaround.num_seconds()),
        anchorage_wait_s: anchorage_wait(v).num_seconds(),
        underway_s: underway.num_seconds(),
        mean_underway_sog: sog,
        gap_flagged: v.gap_flagged,
    }
}

/// Arrival counts per date and category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyTable {
    pub rows: BTreeMap<NaiveDate, [u64; 4]>,
}

impl DailyTable {
    pub fn get(&self, date: NaiveDate, c: VesselCategory) -> u64 {
        self.rows.get(&date).map_or(0, |r| r[c.index()])
    }

    pub fn add(&mut self, date: NaiveDate, c: VesselCategory, n: u64) {
        self.rows.entry(date).or_default()[c.index()] += n;
    }

    pub fn total(&self) -> u64 {
        self.rows.values().flatten().sum()
    }

    pub fn write_csv<W: io::Write>(&self, w: W) -> Result<(), MetricsError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "cargo", "tanker", "passenger", "other", "total"])?;
        for (date, r) in &self.rows {
            let mut rec = vec![date.to_string()];
            rec.extend(r.iter().map(u64::to_string));
            rec.push(r.iter().sum::<u64>().to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn local_date(t: DateTime<Utc>, tz_offset_h: i32) -> NaiveDate {
    (t + TimeDelta::hours(i64::from(tz_offset_h))).date_naive()
}

/// Counts voyage arrivals per date (shifted by `tz_offset_h`) and category.
/// With a `range`, every date in it gets a row, zero or not, and arrivals
/// outside it are ignored.
pub fn daily_arrivals(voyages: &[VoyageRecord], range: Option<(NaiveDate, NaiveDate)>, tz_offset_h: i32) -> DailyTable {
    let mut t = DailyTable::default();
    if let Some((from, to)) = range {
        for d in from.iter_days().take_while(|d| *d <= to) {
            t.rows.insert(d, [0; 4]);
        }
    }
    for v in voyages {
        let d = local_date(v.arrival, tz_offset_h);
        if range.is_none_or(|(from, to)| (from..=to).contains(&d)) {
            t.add(d, v.category, 1);
        }
    }
    t
}

/// Port-call records used as arrival ground truth.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruthCalls {
    pub table: DailyTable,
    /// Categories the source reports on.
    pub categories: BTreeSet<VesselCategory>,
}

#[derive(Deserialize)]
struct CountRow {
    date: NaiveDate,
    category: String,
    arrivals: u64,
}

#[derive(Deserialize)]
struct EventRow {
    timestamp: DateTime<Utc>,
    #[allow(dead_code)]
    mmsi: Option<String>,
    category: String,
}

impl GroundTruthCalls {
    /// Reads `date,category,arrivals` (count mode) or `timestamp,mmsi,category`
    /// (event mode) CSV, chosen by the header. Event timestamps are shifted by
    /// `tz_offset_h` before taking the date.
    pub fn from_csv<R: io::Read>(r: R, tz_offset_h: i32) -> Result<Self, MetricsError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut gt = GroundTruthCalls::default();
        if headers.iter().any(|h| h == "arrivals") {
            for row in rdr.deserialize::<CountRow>() {
                let row = row?;
                let c: VesselCategory = row.category.parse()?;
                gt.categories.insert(c);
                gt.table.add(row.date, c, row.arrivals);
            }
        } else if headers.iter().any(|h| h == "timestamp") {
            for row in rdr.deserialize::<EventRow>() {
                let row = row?;
                let c: VesselCategory = row.category.parse()?;
                gt.categories.insert(c);
                gt.table.add(local_date(row.timestamp, tz_offset_h), c, 1);
            }
        } else {
            return Err(MetricsError::GroundTruth(format!("unrecognised header {headers:?}")));
        }
        Ok(gt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeReport {
    pub per_category: BTreeMap<VesselCategory, f64>,
    pub macro_average: f64,
    pub dates: usize,
}

/// Mean absolute error between two daily tables on the dates both contain,
/// minus `excluded`, for each of `categories`.
pub fn mae_tables(
    a: &DailyTable,
    b: &DailyTable,
    categories: &BTreeSet<VesselCategory>,
    excluded: &BTreeSet<NaiveDate>,
) -> Result<MaeReport, MetricsError> {
    let dates: Vec<NaiveDate> = a.rows.keys().filter(|d| b.rows.contains_key(d) && !excluded.contains(d)).copied().collect();
    if dates.is_empty() || categories.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    let per_category: BTreeMap<VesselCategory, f64> = categories
        .iter()
        .map(|&c| {
            let sum: u64 = dates.iter().map(|&d| a.get(d, c).abs_diff(b.get(d, c))).sum();
            (c, sum as f64 / dates.len() as f64)
        })
        .collect();
    let macro_average = per_category.values().sum::<f64>() / per_category.len() as f64;
    Ok(MaeReport { per_category, macro_average, dates: dates.len() })
}

pub fn arrivals_mae(predicted: &DailyTable, truth: &GroundTruthCalls, excluded: &BTreeSet<NaiveDate>) -> Result<MaeReport, MetricsError> {
    mae_tables(predicted, &truth.table, &truth.categories, excluded)
}

/// Turnaround records of one vessel in arrival order.
pub fn schedule_table(voyages: &[VoyageRecord], mmsi: u32) -> Vec<TurnaroundRecord> {
    let mut out: Vec<_> = voyages.iter().filter(|v| v.mmsi == mmsi).filter_map(turnaround).collect();
    out.sort_by_key(|r| (r.arrival, r.departure));
    out
}

pub fn write_schedule_csv<W: io::Write>(records: &[TurnaroundRecord], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mmsi", "terminal", "arrival", "departure", "turnaround", "turnaround_s"])?;
    for r in records {
        out.write_record([
            r.mmsi.to_string(),
            r.terminal_name.clone().unwrap_or_default(),
            r.arrival.format("%Y-%m-%d %H:%M:%S").to_string(),
            r.departure.format("%Y-%m-%d %H:%M:%S").to_string(),
            format_duration(r.turnaround),
            r.turnaround.num_seconds().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
    Count,
}

impl FromStr for Statistic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "count" => Ok(Statistic::Count),
            other => Err(format!("unknown statistic {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyRow {
    pub iso_year: i32,
    pub iso_week: u32,
    pub records: usize,
    /// Hours for mean and median, a record count for count.
    pub value: f64,
}

/// Groups `(instant, duration)` records by the ISO week of the instant.
pub fn weekly_aggregate(records: impl IntoIterator<Item = (DateTime<Utc>, TimeDelta)>, stat: Statistic) -> Vec<WeeklyRow> {
    let mut weeks: BTreeMap<(i32, u32), Vec<f64>> = BTreeMap::new();
    for (t, d) in records {
        let w = t.iso_week();
        weeks.entry((w.year(), w.week())).or_default().push(d.num_milliseconds() as f64 / 3_600_000.0);
    }
    weeks
        .into_iter()
        .map(|((iso_year, iso_week), mut v)| {
            let value = match stat {
                Statistic::Count => v.len() as f64,
                Statistic::Mean => v.iter().sum::<f64>() / v.len() as f64,
                Statistic::Median => {
                    v.sort_by(f64::total_cmp);
                    let m = v.len() / 2;
                    if v.len() % 2 == 1 {
                        v[m]
                    } else {
                        (v[m - 1] + v[m]) / 2.0
                    }
                }
            };
            WeeklyRow { iso_year, iso_week, records: v.len(), value }
        })
        .collect()
}

pub fn write_weekly_csv<W: io::Write>(rows: &[WeeklyRow], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_voyage_metrics_csv<W: io::Write>(rows: &[VoyageMetrics], w: W) -> Result<(), MetricsError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationSummary {
    pub count: usize,
    pub mean_h: Option<f64>,
    pub median_h: Option<f64>,
}

fn summarize_hours(mut hours: Vec<f64>) -> DurationSummary {
    hours.sort_by(f64::total_cmp);
    let n = hours.len();
    DurationSummary {
        count: n,
        mean_h: (n > 0).then(|| hours.iter().sum::<f64>() / n as f64),
        median_h: (n > 0).then(|| if n % 2 == 1 { hours[n / 2] } else { (hours[n / 2 - 1] + hours[n / 2]) / 2.0 }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsOptions {
    pub range: Option<(NaiveDate, NaiveDate)>,
    pub tz_offset_h: i32,
    pub statistic: Statistic,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { range: None, tz_offset_h: 0, statistic: Statistic::Mean }
    }
}

/// Everything the metrics stage reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub voyages: usize,
    pub gap_flagged_voyages: usize,
    pub turnaround: BTreeMap<VesselCategory, DurationSummary>,
    pub anchorage_wait: BTreeMap<VesselCategory, DurationSummary>,
    pub arrivals_total: u64,
    pub daily_arrivals: DailyTable,
    pub weekly_turnaround: Vec<WeeklyRow>,
    pub weekly_anchorage_wait: Vec<WeeklyRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<MaeReport>,
    #[serde(skip)]
    pub per_voyage: Vec<VoyageMetrics>,
}

pub fn build_report(
    voyages: &[VoyageRecord],
    truth: Option<(&GroundTruthCalls, &BTreeSet<NaiveDate>)>,
    opts: &MetricsOptions,
) -> Result<MetricsReport, MetricsError> {
    let per_voyage: Vec<VoyageMetrics> = voyages.par_iter().map(voyage_metrics).collect();
    let mut turn: BTreeMap<VesselCategory, Vec<f64>> = BTreeMap::new();
    let mut wait: BTreeMap<VesselCategory, Vec<f64>> = BTreeMap::new();
    for m in &per_voyage {
        if let Some(s) = m.turnaround_s {
            turn.entry(m.category).or_default().push(s as f64 / 3600.0);
        }
        wait.entry(m.category).or_default().push(m.anchorage_wait_s as f64 / 3600.0);
    }
    let daily = daily_arrivals(voyages, opts.range, opts.tz_offset_h);
    let mae = truth.map(|(t, excluded)| arrivals_mae(&daily, t, excluded)).transpose()?;
    Ok(MetricsReport {
        voyages: voyages.len(),
        gap_flagged_voyages: voyages.iter().filter(|v| v.gap_flagged).count(),
        turnaround: turn.into_iter().map(|(c, v)| (c, summarize_hours(v))).collect(),
        anchorage_wait: wait.into_iter().map(|(c, v)| (c, summarize_hours(v))).collect(),
        arrivals_total: daily.total(),
        weekly_turnaround: weekly_aggregate(
            per_voyage.iter().filter_map(|m| Some((m.berth_arrival?, TimeDelta::seconds(m.turnaround_s?)))),
            opts.statistic,
        ),
        weekly_anchorage_wait: weekly_aggregate(
            per_voyage.iter().map(|m| (m.arrival, TimeDelta::seconds(m.anchorage_wait_s))),
            opts.statistic,
        ),
        daily_arrivals: daily,
        mae,
        per_voyage,
    })
}
