//! Synthetic port traffic with a ground-truth log.
//!
//! A [`Scenario`] describes a built-in port (one anchorage, three terminals),
//! Poisson-distributed visits, optional scheduled ferries and explicit
//! visits, a navigational-status error rate and data outages. [`generate`]
//! turns it into time-ordered NMEA lines plus a [`TruthLog`].
//!
//! Tracks follow a fixed pattern: enter at the south gate, optionally anchor,
//! berth at a terminal, leave through a second gate 4 km from the first.
//! Anchored vessels swing around their anchor while the heading drifts and
//! yaws; moored vessels hold their heading within 2 degrees.

use std::collections::BTreeMap;
use std::io;

use chrono::{DateTime, NaiveDate, NaiveTime, TimeDelta, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::encode::{encode_position, encode_static, to_sentences};
use crate::codec::{CorrectedStatus, Dimensions, NavStatus, PositionReport, StaticReport};
use crate::geo::{unproject_local, AreaKind};
use crate::metrics::{DailyTable, VesselCategory};
use crate::voyage::PhaseKind;
use crate::{AreaFilter, LatLon, Polygon, PortGeometry};

pub const PORT_ORIGIN: LatLon = LatLon { lat: 37.94, lon: 23.62 };
pub const PORT_RADIUS_M: f64 = 15_000.0;

const ENTRY_GATE: (f64, f64) = (-2_000.0, -14_000.0);
const EXIT_GATE: (f64, f64) = (2_000.0, -14_000.0);
const GATE_JITTER_M: f64 = 300.0;
const STATIC_INTERVAL_S: i64 = 3600;

/// (name, kind, x0, y0, x1, y1) in metres east/north of the port origin.
const AREAS: [(&str, AreaKind, f64, f64, f64, f64); 4] = [
    ("anchorage", AreaKind::Anchorage, -7_000.0, -10_000.0, -1_000.0, -5_000.0),
    ("container", AreaKind::Terminal, 2_000.0, -1_000.0, 2_600.0, -400.0),
    ("passenger", AreaKind::Terminal, -600.0, 400.0, 0.0, 1_000.0),
    ("tanker", AreaKind::Terminal, 4_000.0, 1_500.0, 4_500.0, 2_000.0),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

fn local(x: f64, y: f64) -> LatLon {
    unproject_local(PORT_ORIGIN, x, y)
}

pub fn builtin_port() -> PortGeometry {
    PortGeometry::new(
        AREAS
            .iter()
            .map(|&(name, kind, x0, y0, x1, y1)| {
                Polygon::new(name, kind, vec![local(x0, y0), local(x1, y0), local(x1, y1), local(x0, y1)]).expect("valid rectangle")
            })
            .collect(),
    )
}

/// Port-area filter enclosing the built-in port and both gates.
pub fn builtin_area() -> AreaFilter {
    AreaFilter::Circle { center: PORT_ORIGIN, radius_m: PORT_RADIUS_M }
}

fn area(name: &str) -> Option<(f64, f64, f64, f64)> {
    AREAS.iter().find(|a| a.0 == name).map(|a| (a.2, a.3, a.4, a.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorModel {
    /// Each report independently carries a wrong status with probability p.
    Message,
    /// Each visit, with probability p, reports one fixed wrong status throughout.
    Stuck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CategoryMix {
    pub cargo: f64,
    pub tanker: f64,
    pub passenger: f64,
    pub other: f64,
}

impl Default for CategoryMix {
    fn default() -> Self {
        Self { cargo: 0.45, tanker: 0.15, passenger: 0.25, other: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FerrySpec {
    pub mmsi: u32,
    #[serde(default = "FerrySpec::default_name")]
    pub name: String,
    #[serde(default = "FerrySpec::default_ship_type")]
    pub ship_type: u8,
    #[serde(default = "FerrySpec::default_terminal")]
    pub terminal: String,
    /// Berthing time of day.
    #[serde(default = "FerrySpec::default_arrive")]
    pub arrive: NaiveTime,
    /// Unberthing time of day.
    #[serde(default = "FerrySpec::default_depart")]
    pub depart: NaiveTime,
    /// Dates on which the morning departure does not happen.
    #[serde(default)]
    pub skip_departures: Vec<NaiveDate>,
    #[serde(default = "FerrySpec::default_jitter")]
    pub jitter_min: f64,
}

impl FerrySpec {
    fn default_name() -> String {
        "HIGHSPEED".into()
    }
    fn default_ship_type() -> u8 {
        60
    }
    fn default_terminal() -> String {
        "passenger".into()
    }
    fn default_arrive() -> NaiveTime {
        NaiveTime::from_hms_opt(14, 10, 0).expect("valid time")
    }
    fn default_depart() -> NaiveTime {
        NaiveTime::from_hms_opt(4, 20, 0).expect("valid time")
    }
    fn default_jitter() -> f64 {
        5.0
    }

    pub fn new(mmsi: u32) -> Self {
        Self {
            mmsi,
            name: Self::default_name(),
            ship_type: Self::default_ship_type(),
            terminal: Self::default_terminal(),
            arrive: Self::default_arrive(),
            depart: Self::default_depart(),
            skip_departures: Vec::new(),
            jitter_min: Self::default_jitter(),
        }
    }
}

/// A visit with fixed timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitSpec {
    #[serde(default)]
    pub mmsi: Option<u32>,
    pub ship_type: u8,
    /// Entry time, hours after scenario start.
    pub arrival_h: f64,
    /// Consecutive anchorage stops before berthing.
    #[serde(default)]
    pub anchor_h: Vec<f64>,
    /// Time at berth; 0 passes through without mooring.
    pub berth_h: f64,
    #[serde(default)]
    pub terminal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutageSpec {
    /// Hours after scenario start.
    pub start_h: f64,
    pub duration_h: f64,
    /// Only this vessel goes silent; all traffic if absent.
    #[serde(default)]
    pub mmsi: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub duration_h: f64,
    /// Poisson rate of random visits.
    pub arrivals_per_day: f64,
    pub mix: CategoryMix,
    pub anchorage_probability: f64,
    pub anchorage_h: [f64; 2],
    pub berth_h: [f64; 2],
    pub speed_kn: [f64; 2],
    pub ferries: Vec<FerrySpec>,
    pub visits: Vec<VisitSpec>,
    pub error_rate: f64,
    pub error_model: ErrorModel,
    /// Share of visits whose vessel never reports a heading.
    pub no_heading_share: f64,
    /// Per-report probability of a missing heading.
    pub heading_dropout: f64,
    pub outages: Vec<OutageSpec>,
    pub cadence_underway_s: i64,
    pub cadence_stopped_s: i64,
    /// Anchored heading drift range, degrees per hour.
    pub drift_deg_h: [f64; 2],
    /// Amplitude of the anchored yaw oscillation, degrees.
    pub yaw_deg: f64,
    pub yaw_period_min: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            start: DateTime::from_timestamp(1_567_987_200, 0).expect("valid"), // 2019-09-09
            duration_h: 24.0,
            arrivals_per_day: 54.0,
            mix: CategoryMix::default(),
            anchorage_probability: 0.4,
            anchorage_h: [1.0, 8.0],
            berth_h: [6.0, 30.0],
            speed_kn: [8.0, 14.0],
            ferries: Vec::new(),
            visits: Vec::new(),
            error_rate: 0.0,
            error_model: ErrorModel::Message,
            no_heading_share: 0.1,
            heading_dropout: 0.02,
            outages: Vec::new(),
            cadence_underway_s: 10,
            cadence_stopped_s: 180,
            drift_deg_h: [10.0, 60.0],
            yaw_deg: 20.0,
            yaw_period_min: 90.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidScenario(m));
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if !(self.duration_h > 0.0 && self.duration_h.is_finite()) {
            return bad("duration_h must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.error_rate) {
            return bad(format!("error_rate {} outside [0, 1]", self.error_rate));
        }
        for (name, v) in [
            ("anchorage_probability", self.anchorage_probability),
            ("no_heading_share", self.no_heading_share),
            ("heading_dropout", self.heading_dropout),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if !(self.arrivals_per_day >= 0.0 && self.arrivals_per_day.is_finite()) {
            return bad("arrivals_per_day must be non-negative".into());
        }
        if self.cadence_underway_s <= 0 || self.cadence_stopped_s <= 0 {
            return bad("cadences must be positive".into());
        }
        for (name, r) in
            [("anchorage_h", self.anchorage_h), ("berth_h", self.berth_h), ("speed_kn", self.speed_kn), ("drift_deg_h", self.drift_deg_h)]
        {
            if !range_ok(r) {
                return bad(format!("{name} must be an ordered non-negative range"));
            }
        }
        if self.speed_kn[0] < 2.0 {
            return bad("speed_kn must stay above 2 kn".into());
        }
        let m = &self.mix;
        let weights = [m.cargo, m.tanker, m.passenger, m.other];
        if weights.iter().any(|w| !(*w >= 0.0)) || weights.iter().sum::<f64>() <= 0.0 {
            return bad("category mix weights must be non-negative and not all zero".into());
        }
        if !(self.yaw_deg >= 0.0 && self.yaw_period_min > 0.0) {
            return bad("yaw_deg must be non-negative and yaw_period_min positive".into());
        }
        for f in &self.ferries {
            if area(&f.terminal).is_none() {
                return bad(format!("ferry {}: unknown terminal {:?}", f.mmsi, f.terminal));
            }
        }
        for v in &self.visits {
            if v.terminal.as_deref().is_some_and(|t| area(t).is_none()) {
                return bad(format!("visit: unknown terminal {:?}", v.terminal));
            }
            if v.anchor_h.iter().chain([&v.berth_h, &v.arrival_h]).any(|h| !(*h >= 0.0)) {
                return bad("visit hours must be non-negative".into());
            }
        }
        for o in &self.outages {
            if !(o.duration_h > 0.0 && o.start_h.is_finite()) {
                return bad("outage duration must be positive".into());
            }
        }
        Ok(())
    }

    pub fn end(&self) -> DateTime<Utc> {
        self.start + secs(self.duration_h * 3600.0)
    }
}

fn secs(s: f64) -> TimeDelta {
    TimeDelta::seconds(s.round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPhase {
    pub kind: PhaseKind,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl TruthPhase {
    pub fn duration(&self) -> TimeDelta {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthVisit {
    pub mmsi: u32,
    pub ship_type: u8,
    pub category: VesselCategory,
    /// First scheduled report in the port area.
    pub arrival: DateTime<Utc>,
    pub departure: DateTime<Utc>,
    pub terminal: Option<String>,
    pub berth_arrival: Option<DateTime<Utc>>,
    pub berth_departure: Option<DateTime<Utc>>,
    pub anchorage_wait_s: i64,
    pub phases: Vec<TruthPhase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthMessage {
    pub mmsi: u32,
    pub timestamp: DateTime<Utc>,
    pub true_navstat: CorrectedStatus,
    pub reported_navstat: CorrectedStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthLog {
    pub visits: Vec<TruthVisit>,
    /// Every delivered position report, in emission order.
    pub messages: Vec<TruthMessage>,
    pub outages: Vec<(DateTime<Utc>, DateTime<Utc>, Option<u32>)>,
    pub daily_arrivals: DailyTable,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TruthRecord {
    Visit(TruthVisit),
    Message(TruthMessage),
    Outage { start: DateTime<Utc>, end: DateTime<Utc>, mmsi: Option<u32> },
    Arrivals { date: NaiveDate, cargo: u64, tanker: u64, passenger: u64, other: u64 },
}

impl TruthLog {
    pub fn write_jsonl<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        let mut line = |r: &TruthRecord| -> io::Result<()> {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")
        };
        for v in &self.visits {
            line(&TruthRecord::Visit(v.clone()))?;
        }
        for &(start, end, mmsi) in &self.outages {
            line(&TruthRecord::Outage { start, end, mmsi })?;
        }
        for (&date, r) in &self.daily_arrivals.rows {
            line(&TruthRecord::Arrivals { date, cargo: r[0], tanker: r[1], passenger: r[2], other: r[3] })?;
        }
        for m in &self.messages {
            line(&TruthRecord::Message(*m))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: io::BufRead>(r: R) -> io::Result<Self> {
        let mut log = TruthLog::default();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(io::Error::other)? {
                TruthRecord::Visit(v) => log.visits.push(v),
                TruthRecord::Message(m) => log.messages.push(m),
                TruthRecord::Outage { start, end, mmsi } => log.outages.push((start, end, mmsi)),
                TruthRecord::Arrivals { date, cargo, tanker, passenger, other } => {
                    log.daily_arrivals.rows.insert(date, [cargo, tanker, passenger, other]);
                }
            }
        }
        Ok(log)
    }

    /// True status by (mmsi, timestamp).
    pub fn status_index(&self) -> BTreeMap<(u32, DateTime<Utc>), CorrectedStatus> {
        self.messages.iter().map(|m| ((m.mmsi, m.timestamp), m.true_navstat)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// NMEA lines with `c:` tag blocks, time-ordered.
    pub lines: Vec<String>,
    /// Delivered position reports, in line order.
    pub reports: Vec<PositionReport>,
    pub statics: Vec<StaticReport>,
    pub truth: TruthLog,
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    Line { from: (f64, f64), to: (f64, f64), speed_kn: f64 },
    Anchor { center: (f64, f64), heading0: f64, drift: f64, yaw_phase: f64 },
    Berth { pos: (f64, f64), heading: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Leg {
    start: i64,
    end: i64,
    motion: Motion,
}

impl Leg {
    fn kind(&self) -> PhaseKind {
        match self.motion {
            Motion::Line { .. } => PhaseKind::Underway,
            Motion::Anchor { .. } => PhaseKind::Anchored,
            Motion::Berth { .. } => PhaseKind::Moored,
        }
    }
}

struct Plan {
    mmsi: u32,
    ship_type: u8,
    name: String,
    terminal: Option<String>,
    legs: Vec<Leg>,
    faults: Faults,
}

/// Per-visit reporting faults.
#[derive(Debug, Clone, Copy)]
struct Faults {
    stuck: Option<CorrectedStatus>,
    no_heading: bool,
}

const KN_TO_MS: f64 = 1852.0 / 3600.0;
const SWING_RADIUS_M: f64 = 80.0;

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn point_in(rng: &mut ChaCha8Rng, name: &str, inset: f64) -> (f64, f64) {
    let (x0, y0, x1, y1) = area(name).expect("known area");
    (rng.random_range(x0 + inset..x1 - inset), rng.random_range(y0 + inset..y1 - inset))
}

fn gate(rng: &mut ChaCha8Rng, g: (f64, f64)) -> (f64, f64) {
    (g.0 + rng.random_range(-GATE_JITTER_M..GATE_JITTER_M), g.1)
}

fn bearing(from: (f64, f64), to: (f64, f64)) -> f64 {
    (to.0 - from.0).atan2(to.1 - from.1).to_degrees().rem_euclid(360.0)
}

fn transit_s(from: (f64, f64), to: (f64, f64), speed_kn: f64) -> i64 {
    let d = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    ((d / (speed_kn * KN_TO_MS)).ceil() as i64).max(60)
}

fn default_terminal(ship_type: u8) -> &'static str {
    match VesselCategory::from_ship_type(Some(ship_type)) {
        VesselCategory::Tanker => "tanker",
        VesselCategory::Passenger => "passenger",
        _ => "container",
    }
}

fn ship_type_for(rng: &mut ChaCha8Rng, c: VesselCategory) -> u8 {
    match c {
        VesselCategory::Cargo => rng.random_range(70..80),
        VesselCategory::Tanker => rng.random_range(80..90),
        VesselCategory::Passenger => rng.random_range(60..70),
        VesselCategory::Other => [30, 31, 52, 90, 0][rng.random_range(0..5)],
    }
}

struct Planner<'a> {
    sc: &'a Scenario,
    rng: ChaCha8Rng,
}

impl Planner<'_> {
    fn anchor_motion(&mut self, center: (f64, f64)) -> Motion {
        let sign = if self.rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Motion::Anchor {
            center,
            heading0: self.rng.random_range(0.0..360.0),
            drift: sign * uniform(&mut self.rng, self.sc.drift_deg_h),
            yaw_phase: self.rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    /// Legs for: entry gate, anchor stops, berth, exit gate.
    fn visit_legs(&mut self, entry: i64, anchors: &[f64], berth_s: Option<(i64, &str)>) -> Vec<Leg> {
        let speed = uniform(&mut self.rng, self.sc.speed_kn);
        let mut legs = Vec::new();
        let mut pos = gate(&mut self.rng, ENTRY_GATE);
        let mut t = entry;
        let go = |legs: &mut Vec<Leg>, pos: &mut (f64, f64), t: &mut i64, to: (f64, f64)| {
            let d = transit_s(*pos, to, speed);
            legs.push(Leg { start: *t, end: *t + d, motion: Motion::Line { from: *pos, to, speed_kn: speed } });
            *t += d;
            *pos = to;
        };
        for &h in anchors {
            let spot = point_in(&mut self.rng, "anchorage", 600.0);
            go(&mut legs, &mut pos, &mut t, spot);
            let motion = self.anchor_motion(spot);
            let d = (h * 3600.0).round() as i64;
            legs.push(Leg { start: t, end: t + d, motion });
            t += d;
        }
        if let Some((d, terminal)) = berth_s {
            let spot = point_in(&mut self.rng, terminal, 60.0);
            go(&mut legs, &mut pos, &mut t, spot);
            let heading = self.rng.random_range(0.0..360.0);
            legs.push(Leg { start: t, end: t + d, motion: Motion::Berth { pos: spot, heading } });
            t += d;
        }
        let exit = gate(&mut self.rng, EXIT_GATE);
        go(&mut legs, &mut pos, &mut t, exit);
        legs
    }

    /// Ferry legs arranged so that berthing happens at `berth_at`.
    fn ferry_legs(&mut self, berth_at: i64, unberth_at: i64, terminal: &str) -> Vec<Leg> {
        let speed = uniform(&mut self.rng, self.sc.speed_kn);
        let from = gate(&mut self.rng, ENTRY_GATE);
        let spot = point_in(&mut self.rng, terminal, 60.0);
        let exit = gate(&mut self.rng, EXIT_GATE);
        let d_in = transit_s(from, spot, speed);
        let d_out = transit_s(spot, exit, speed);
        let heading = self.rng.random_range(0.0..360.0);
        vec![
            Leg { start: berth_at - d_in, end: berth_at, motion: Motion::Line { from, to: spot, speed_kn: speed } },
            Leg { start: berth_at, end: unberth_at, motion: Motion::Berth { pos: spot, heading } },
            Leg { start: unberth_at, end: unberth_at + d_out, motion: Motion::Line { from: spot, to: exit, speed_kn: speed } },
        ]
    }

    fn faults(&mut self) -> Faults {
        let stuck = (self.sc.error_model == ErrorModel::Stuck && self.rng.random_bool(self.sc.error_rate))
            .then(|| CorrectedStatus::ALL[self.rng.random_range(0..3)]);
        Faults { stuck, no_heading: self.rng.random_bool(self.sc.no_heading_share) }
    }

    fn plans(&mut self) -> Vec<Plan> {
        let sc = self.sc;
        let (t0, t_end) = (sc.start.timestamp(), sc.end().timestamp());
        let mut plans = Vec::new();
        let mut next_mmsi = 210_000_000u32;

        for v in &sc.visits {
            let mmsi = v.mmsi.unwrap_or_else(|| {
                next_mmsi += 1;
                next_mmsi
            });
            let terminal = v.terminal.clone().unwrap_or_else(|| default_terminal(v.ship_type).to_string());
            let berth = (v.berth_h > 0.0).then(|| ((v.berth_h * 3600.0).round() as i64, terminal.as_str()));
            let legs = self.visit_legs(t0 + (v.arrival_h * 3600.0).round() as i64, &v.anchor_h, berth);
            let faults = self.faults();
            plans.push(Plan {
                mmsi,
                ship_type: v.ship_type,
                name: format!("VISIT {mmsi}"),
                terminal: berth.map(|_| terminal.clone()),
                legs,
                faults,
            });
        }

        for f in &sc.ferries {
            let jitter = |rng: &mut ChaCha8Rng| (rng.random_range(-f.jitter_min..=f.jitter_min) * 60.0).round() as i64;
            let mut day = sc.start.date_naive();
            while day.and_time(f.arrive).and_utc().timestamp() < t_end {
                let berth_at = day.and_time(f.arrive).and_utc().timestamp() + jitter(&mut self.rng);
                let mut dep_day = day.succ_opt().expect("date in range");
                while f.skip_departures.contains(&dep_day) {
                    dep_day = dep_day.succ_opt().expect("date in range");
                }
                let unberth_at = dep_day.and_time(f.depart).and_utc().timestamp() + jitter(&mut self.rng);
                let legs = self.ferry_legs(berth_at, unberth_at, &f.terminal);
                if legs[0].start >= t0 {
                    let faults = self.faults();
                    plans.push(Plan {
                        mmsi: f.mmsi,
                        ship_type: f.ship_type,
                        name: f.name.clone(),
                        terminal: Some(f.terminal.clone()),
                        legs,
                        faults,
                    });
                }
                day = dep_day;
            }
        }

        if sc.arrivals_per_day > 0.0 {
            let gaps = Exp::new(sc.arrivals_per_day / 86_400.0).expect("positive rate");
            let m = &sc.mix;
            let weights = [m.cargo, m.tanker, m.passenger, m.other];
            let total: f64 = weights.iter().sum();
            let mut t = t0 as f64;
            loop {
                t += gaps.sample(&mut self.rng);
                if t >= t_end as f64 {
                    break;
                }
                let mut u = self.rng.random_range(0.0..total);
                let mut cat = VesselCategory::Other;
                for (c, w) in VesselCategory::ALL.into_iter().zip(weights) {
                    if u < w {
                        cat = c;
                        break;
                    }
                    u -= w;
                }
                let ship_type = ship_type_for(&mut self.rng, cat);
                let mut anchors = Vec::new();
                if self.rng.random_bool(sc.anchorage_probability) {
                    anchors.push(uniform(&mut self.rng, sc.anchorage_h));
                    if self.rng.random_bool(0.1) {
                        anchors.push(uniform(&mut self.rng, sc.anchorage_h));
                    }
                }
                let berth_s = (uniform(&mut self.rng, sc.berth_h) * 3600.0).round() as i64;
                let terminal = default_terminal(ship_type);
                let legs = self.visit_legs(t.round() as i64, &anchors, Some((berth_s, terminal)));
                next_mmsi += 1;
                let faults = self.faults();
                plans.push(Plan {
                    mmsi: next_mmsi,
                    ship_type,
                    name: format!("VESSEL {next_mmsi}"),
                    terminal: Some(terminal.into()),
                    legs,
                    faults,
                });
            }
        }
        plans
    }
}

fn status_of(kind: PhaseKind) -> CorrectedStatus {
    match kind {
        PhaseKind::Underway => CorrectedStatus::Underway,
        PhaseKind::Anchored => CorrectedStatus::AtAnchor,
        PhaseKind::Moored => CorrectedStatus::Moored,
    }
}

enum Event {
    Position(PositionReport, CorrectedStatus),
    Static(StaticReport),
}

/// Generates the scenario. Output depends only on the scenario.
pub fn generate(sc: &Scenario) -> Result<SynthOutput, SynthError> {
    sc.validate()?;
    let mut planner = Planner { sc, rng: ChaCha8Rng::seed_from_u64(sc.seed) };
    let plans = planner.plans();
    let mut rng = planner.rng;
    let (t0, t_end) = (sc.start.timestamp(), sc.end().timestamp());
    let outages: Vec<(i64, i64, Option<u32>)> = sc
        .outages
        .iter()
        .map(|o| {
            let s = t0 + (o.start_h * 3600.0).round() as i64;
            (s, s + (o.duration_h * 3600.0).round() as i64, o.mmsi)
        })
        .collect();
    let silenced = |t: i64, mmsi: u32| outages.iter().any(|&(s, e, m)| s <= t && t < e && m.is_none_or(|m| m == mmsi));

    let mut events: Vec<(i64, u32, u64, Event)> = Vec::new();
    let mut truth = TruthLog::default();
    let mut seq = 0u64;
    for plan in &plans {
        let last_leg = plan.legs.len() - 1;
        let mut times: Vec<(i64, usize)> = Vec::new();
        for (li, leg) in plan.legs.iter().enumerate() {
            let cadence = if leg.kind() == PhaseKind::Underway { sc.cadence_underway_s } else { sc.cadence_stopped_s };
            let mut t = leg.start;
            while t < leg.end || (li == last_leg && t == leg.end) {
                times.push((t, li));
                t = if li == last_leg && t < leg.end { (t + cadence).min(leg.end) } else { t + cadence };
            }
        }
        times.retain(|&(t, _)| (t0..=t_end).contains(&t));
        let (Some(&(first_t, _)), Some(&(last_t, _))) = (times.first(), times.last()) else { continue };

        let dims = Dimensions { to_bow: 120, to_stern: 30, to_port: 12, to_starboard: 12 };
        let stat = StaticReport { mmsi: plan.mmsi, vessel_name: plan.name.clone(), ship_type: plan.ship_type, dimensions: Some(dims) };
        let mut next_static = first_t;
        for &(t, li) in &times {
            if t >= next_static {
                if !silenced(t, plan.mmsi) {
                    seq += 1;
                    events.push((t, plan.mmsi, seq, Event::Static(stat.clone())));
                }
                next_static = t + STATIC_INTERVAL_S;
            }
            let leg = &plan.legs[li];
            let truth_status = status_of(leg.kind());
            let report = position_at(&mut rng, sc, plan.mmsi, leg, t, plan.faults, truth_status);
            if !silenced(t, plan.mmsi) {
                seq += 1;
                events.push((t, plan.mmsi, seq, Event::Position(report, truth_status)));
            }
        }

        let phases: Vec<TruthPhase> = plan
            .legs
            .iter()
            .filter(|l| l.end >= first_t && l.start <= last_t)
            .map(|l| TruthPhase { kind: l.kind(), start: at(l.start.max(first_t)), end: at(l.end.min(last_t)) })
            .filter(|p| p.end > p.start || p.kind == PhaseKind::Underway)
            .collect();
        let berth = phases.iter().find(|p| p.kind == PhaseKind::Moored);
        let berth_index = phases.iter().position(|p| p.kind == PhaseKind::Moored).unwrap_or(phases.len());
        let anchorage_wait_s =
            phases[..berth_index].iter().filter(|p| p.kind == PhaseKind::Anchored).map(|p| p.duration().num_seconds()).sum();
        truth.visits.push(TruthVisit {
            mmsi: plan.mmsi,
            ship_type: plan.ship_type,
            category: VesselCategory::from_ship_type(Some(plan.ship_type)),
            arrival: at(first_t),
            departure: at(last_t),
            terminal: berth.and(plan.terminal.clone()),
            berth_arrival: berth.map(|p| p.start),
            berth_departure: berth.map(|p| p.end),
            anchorage_wait_s,
            phases,
        });
    }
    truth.visits.sort_by_key(|v| (v.arrival, v.mmsi));
    for v in &truth.visits {
        truth.daily_arrivals.add(v.arrival.date_naive(), v.category, 1);
    }
    truth.outages = outages.iter().map(|&(s, e, m)| (at(s), at(e), m)).collect();

    events.sort_by_key(|e| (e.0, e.1, e.2));
    let mut out = SynthOutput { lines: Vec::new(), reports: Vec::new(), statics: Vec::new(), truth };
    let mut message_id = 0u8;
    for (i, (t, _, _, ev)) in events.into_iter().enumerate() {
        let channel = if i % 2 == 0 { 'A' } else { 'B' };
        match ev {
            Event::Position(r, truth_status) => {
                out.lines.extend(to_sentences(&encode_position(&r), channel, 0, Some(at(t))));
                out.truth.messages.push(TruthMessage {
                    mmsi: r.mmsi,
                    timestamp: r.timestamp,
                    true_navstat: truth_status,
                    reported_navstat: r.navstat.to_corrected(),
                });
                out.reports.push(r);
            }
            Event::Static(s) => {
                message_id = (message_id + 1) % 10;
                out.lines.extend(to_sentences(&encode_static(&s), channel, message_id, Some(at(t))));
                out.statics.push(s);
            }
        }
    }
    Ok(out)
}

fn at(t: i64) -> DateTime<Utc> {
    DateTime::from_timestamp(t, 0).expect("timestamp in range")
}

/// Rounds a value to the resolution the wire format carries.
fn quantize(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

fn position_at(
    rng: &mut ChaCha8Rng,
    sc: &Scenario,
    mmsi: u32,
    leg: &Leg,
    t: i64,
    faults: Faults,
    truth: CorrectedStatus,
) -> PositionReport {
    let elapsed_h = (t - leg.start) as f64 / 3600.0;
    let (xy, sog, heading, cog) = match leg.motion {
        Motion::Line { from, to, speed_kn } => {
            let f = if leg.end > leg.start { (t - leg.start) as f64 / (leg.end - leg.start) as f64 } else { 1.0 };
            let xy = (from.0 + (to.0 - from.0) * f, from.1 + (to.1 - from.1) * f);
            let b = bearing(from, to);
            let sog = speed_kn + rng.random_range(-0.3..0.3);
            (xy, sog, b + rng.random_range(-2.0..2.0), b + rng.random_range(-1.0..1.0))
        }
        Motion::Anchor { center, heading0, drift, yaw_phase } => {
            let yaw = sc.yaw_deg * (std::f64::consts::TAU * elapsed_h * 60.0 / sc.yaw_period_min + yaw_phase).sin();
            let h = heading0 + drift * elapsed_h + yaw;
            let r = h.to_radians();
            // The hull points from the anchor towards the bow.
            let xy = (center.0 - SWING_RADIUS_M * r.sin(), center.1 - SWING_RADIUS_M * r.cos());
            (xy, rng.random_range(0.0..0.3), h, rng.random_range(0.0..360.0))
        }
        Motion::Berth { pos, heading } => {
            let xy = (pos.0 + rng.random_range(-3.0..3.0), pos.1 + rng.random_range(-3.0..3.0));
            (xy, rng.random_range(0.0..0.1), heading + rng.random_range(-2.0..2.0), rng.random_range(0.0..360.0))
        }
    };
    let reported = match (faults.stuck, sc.error_model) {
        (Some(s), _) => s,
        (None, ErrorModel::Message) if sc.error_rate > 0.0 && rng.random_bool(sc.error_rate) => {
            let others: Vec<_> = CorrectedStatus::ALL.into_iter().filter(|&s| s != truth).collect();
            others[rng.random_range(0..2)]
        }
        _ => truth,
    };
    let heading_lost = faults.no_heading || (sc.heading_dropout > 0.0 && rng.random_bool(sc.heading_dropout));
    let p = local(xy.0, xy.1);
    PositionReport {
        msg_type: 1,
        mmsi,
        timestamp: at(t),
        lat: quantize(p.lat, 600_000.0),
        lon: quantize(p.lon, 600_000.0),
        sog: Some(quantize(sog.max(0.0), 10.0)),
        cog: Some(quantize(cog.rem_euclid(360.0), 10.0) % 360.0),
        heading: (!heading_lost).then(|| (heading.rem_euclid(360.0).round() as u16) % 360),
        navstat: NavStatus(reported.code()),
        rot: Some(0),
    }
}
