//! Port visits ("voyages") and their navigational phases.

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::{DateTime, TimeDelta, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{CorrectedStatus, PositionReport, StaticReport};
use crate::geo::haversine_m;
use crate::metrics::VesselCategory;
use crate::validate::Outage;
use crate::{AreaFilter, LatLon, PortGeometry, ValidatedMessage};

/// Any gap longer than this starts a new voyage.
pub const MAX_GAP: TimeDelta = TimeDelta::hours(24);
/// A gap longer than this starts a new voyage if the vessel moved.
pub const MOVED_GAP: TimeDelta = TimeDelta::hours(5);
pub const MOVED_DISTANCE_M: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKind {
    Underway,
    Anchored,
    Moored,
}

impl From<CorrectedStatus> for PhaseKind {
    fn from(s: CorrectedStatus) -> Self {
        match s {
            CorrectedStatus::Underway => PhaseKind::Underway,
            CorrectedStatus::AtAnchor => PhaseKind::Anchored,
            CorrectedStatus::Moored => PhaseKind::Moored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub start: DateTime<Utc>,
    /// Start of the following phase, or the last message of the voyage.
    pub end: DateTime<Utc>,
    pub mean_sog: Option<f64>,
    /// Centroid of the phase positions.
    pub location: LatLon,
    pub message_count: usize,
    /// Messages with speed available; the weight of `mean_sog`.
    pub sog_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<String>,
}

impl Phase {
    pub fn duration(&self) -> TimeDelta {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Voyage {
    pub mmsi: u32,
    pub messages: Vec<ValidatedMessage>,
    pub phases: Vec<Phase>,
    pub gap_flagged: bool,
}

impl Voyage {
    pub fn arrival(&self) -> DateTime<Utc> {
        self.messages.first().expect("voyage is non-empty").report.timestamp
    }

    pub fn departure(&self) -> DateTime<Utc> {
        self.messages.last().expect("voyage is non-empty").report.timestamp
    }

    /// Flattens the voyage into its serialized form; `ship_type` comes from
    /// static reports, if any were seen.
    pub fn record(&self, ship_type: Option<u8>) -> VoyageRecord {
        VoyageRecord {
            mmsi: self.mmsi,
            ship_type,
            category: VesselCategory::from_ship_type(ship_type),
            arrival: self.arrival(),
            departure: self.departure(),
            message_count: self.messages.len(),
            phases: self.phases.clone(),
            gap_flagged: self.gap_flagged,
        }
    }
}

/// One line of voyage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoyageRecord {
    pub mmsi: u32,
    pub ship_type: Option<u8>,
    pub category: VesselCategory,
    pub arrival: DateTime<Utc>,
    pub departure: DateTime<Utc>,
    pub message_count: usize,
    pub phases: Vec<Phase>,
    pub gap_flagged: bool,
}

impl VoyageRecord {
    pub fn duration(&self) -> TimeDelta {
        self.departure - self.arrival
    }
}

/// Last known ship type per MMSI.
pub fn ship_types<'a>(statics: impl IntoIterator<Item = &'a StaticReport>) -> HashMap<u32, u8> {
    statics.into_iter().map(|s| (s.mmsi, s.ship_type)).collect()
}

/// Whether two consecutive messages of one vessel belong to different voyages.
pub fn should_split(prev: &PositionReport, next: &PositionReport) -> bool {
    let gap = next.timestamp - prev.timestamp;
    (gap > MOVED_GAP && haversine_m(prev.position(), next.position()) > MOVED_DISTANCE_M) || gap > MAX_GAP
}

pub fn filter_area(messages: Vec<ValidatedMessage>, area: &AreaFilter) -> Vec<ValidatedMessage> {
    messages.into_iter().filter(|m| area.contains(m.report.position())).collect()
}

fn total_order(a: &ValidatedMessage, b: &ValidatedMessage) -> Ordering {
    (a.report.mmsi, a.report.timestamp).cmp(&(b.report.mmsi, b.report.timestamp)).then_with(|| {
        // Same vessel and instant: fall back to content so the order does not
        // depend on input order.
        let ka = serde_json::to_string(a).expect("serializable");
        let kb = serde_json::to_string(b).expect("serializable");
        ka.cmp(&kb)
    })
}

/// Groups messages into voyages. Input order is irrelevant; every message
/// ends up in exactly one voyage. Voyages are ordered by (mmsi, arrival) and
/// carry no phases yet.
pub fn extract_voyages(mut messages: Vec<ValidatedMessage>) -> Vec<Voyage> {
    messages.par_sort_by(total_order);
    let mut out: Vec<Voyage> = Vec::new();
    for m in messages {
        match out.last_mut() {
            Some(v) if v.mmsi == m.report.mmsi && !should_split(&v.messages.last().expect("non-empty").report, &m.report) => {
                v.messages.push(m)
            }
            _ => out.push(Voyage { mmsi: m.report.mmsi, messages: vec![m], phases: Vec::new(), gap_flagged: false }),
        }
    }
    out
}

/// Splits a voyage into maximal runs of equal corrected status. Moored
/// phases are tagged with the terminal containing their centroid.
pub fn segment_phases(mut voyage: Voyage, port: Option<&PortGeometry>) -> Voyage {
    let msgs = &voyage.messages;
    let mut phases: Vec<Phase> = Vec::new();
    let mut i = 0;
    while i < msgs.len() {
        let status = msgs[i].corrected_navstat;
        let mut j = i;
        while j < msgs.len() && msgs[j].corrected_navstat == status {
            j += 1;
        }
        let run = &msgs[i..j];
        let n = run.len() as f64;
        let location = LatLon::new(run.iter().map(|m| m.report.lat).sum::<f64>() / n, run.iter().map(|m| m.report.lon).sum::<f64>() / n);
        let sogs: Vec<f64> = run.iter().filter_map(|m| m.report.sog).collect();
        let mean_sog = (!sogs.is_empty()).then(|| sogs.iter().sum::<f64>() / sogs.len() as f64);
        let kind = PhaseKind::from(status);
        let terminal = match (kind, port) {
            (PhaseKind::Moored, Some(p)) => p.terminal_at(location).map(|t| t.name.clone()),
            _ => None,
        };
        let end = msgs.get(j).unwrap_or(&msgs[j - 1]).report.timestamp;
        phases.push(Phase {
            kind,
            start: run[0].report.timestamp,
            end,
            mean_sog,
            location,
            message_count: run.len(),
            sog_count: sogs.len(),
            terminal,
        });
        i = j;
    }
    voyage.phases = phases;
    voyage
}

/// Sets `gap_flagged` if an outage overlaps the voyage and the times inside
/// it cannot be trusted. An outage between two messages is harmless when the
/// vessel was anchored or moored on both sides with the same status and did
/// not move more than 100 m; one reaching past either end of the voyage is not.
pub fn flag_gaps(mut voyage: Voyage, outages: &[Outage], cell_deg: f64) -> Voyage {
    let (arrival, departure) = (voyage.arrival(), voyage.departure());
    let mmsi = voyage.mmsi;
    let first_pos = voyage.messages[0].report.position();
    let last_pos = voyage.messages[voyage.messages.len() - 1].report.position();
    let edge = outages.iter().any(|o| {
        o.overlaps(arrival, departure)
            && ((o.start < arrival && o.applies_to(mmsi, first_pos, cell_deg))
                || (o.end > departure && o.applies_to(mmsi, last_pos, cell_deg)))
    });
    let inner = voyage.messages.windows(2).any(|w| {
        let (a, b) = (&w[0], &w[1]);
        let hit =
            outages.iter().any(|o| o.overlaps(a.report.timestamp, b.report.timestamp) && o.applies_to(mmsi, a.report.position(), cell_deg));
        let harmless = a.corrected_navstat.is_stopped()
            && a.corrected_navstat == b.corrected_navstat
            && haversine_m(a.report.position(), b.report.position()) <= MOVED_DISTANCE_M;
        hit && !harmless
    });
    voyage.gap_flagged = edge || inner;
    voyage
}

/// Extract, segment and flag in one step.
pub fn build_voyages(messages: Vec<ValidatedMessage>, port: Option<&PortGeometry>, outages: &[Outage], cell_deg: f64) -> Vec<Voyage> {
    extract_voyages(messages).into_par_iter().map(|v| flag_gaps(segment_phases(v, port), outages, cell_deg)).collect()
}
