//! Detection of missing-data periods at global, vessel and area scope.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use crate::codec::PositionReport;
use crate::LatLon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutageScope {
    Global,
    Area,
    Vessel,
}

/// Square lat/lon cell, indexed by `floor(coordinate / size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub row: i32,
    pub col: i32,
}

impl GridCell {
    pub fn of(p: LatLon, size_deg: f64) -> Self {
        Self { row: (p.lat / size_deg).floor() as i32, col: (p.lon / size_deg).floor() as i32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub scope: OutageScope,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mmsi: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<GridCell>,
}

impl Outage {
    pub fn global(start: DateTime<Utc>, end: DateTime<Utc>) -> Self {
        Self { scope: OutageScope::Global, start, end, mmsi: None, cell: None }
    }

    pub fn duration(&self) -> TimeDelta {
        self.end - self.start
    }

    /// True if the outage intersects the open interval (from, to).
    pub fn overlaps(&self, from: DateTime<Utc>, to: DateTime<Utc>) -> bool {
        self.start < to && self.end > from
    }

    /// Whether the outage concerns vessel `mmsi` last seen at `last_seen`.
    pub fn applies_to(&self, mmsi: u32, last_seen: LatLon, cell_deg: f64) -> bool {
        match self.scope {
            OutageScope::Global => true,
            OutageScope::Vessel => self.mmsi == Some(mmsi),
            OutageScope::Area => self.cell == Some(GridCell::of(last_seen, cell_deg)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageConfig {
    pub global_gap: TimeDelta,
    pub vessel_gap: TimeDelta,
    /// A vessel only counts as silent if it reported faster than this before.
    pub vessel_cadence: TimeDelta,
    pub area_gap: TimeDelta,
    pub cell_deg: f64,
}

impl Default for OutageConfig {
    fn default() -> Self {
        Self {
            global_gap: TimeDelta::minutes(15),
            vessel_gap: TimeDelta::hours(1),
            vessel_cadence: TimeDelta::minutes(5),
            area_gap: TimeDelta::hours(1),
            cell_deg: 0.05,
        }
    }
}

struct Silence {
    mmsi: u32,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
    cell: GridCell,
}

/// Length of `[start, end]` not covered by the disjoint, sorted `global` outages.
fn uncovered(start: DateTime<Utc>, end: DateTime<Utc>, global: &[Outage]) -> TimeDelta {
    let covered =
        global.iter().filter(|o| o.overlaps(start, end)).map(|o| o.end.min(end) - o.start.max(start)).fold(TimeDelta::zero(), |a, b| a + b);
    (end - start) - covered
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Finds outages in a message stream observed up to `now`.
///
/// Global outages are stream-wide gaps, including a trailing gap up to `now`.
/// A vessel outage is a silence of a vessel that was reporting quickly, not
/// explained by a global outage. Two or more vessels going silent together in
/// one grid cell, with nothing else heard from that cell, become a single area
/// outage instead.
pub fn detect_outages(stream: &[PositionReport], now: DateTime<Utc>, cfg: &OutageConfig) -> Vec<Outage> {
    let mut order: Vec<usize> = (0..stream.len()).collect();
    order.sort_by_key(|&i| (stream[i].timestamp, i));

    let mut global = Vec::new();
    for w in order.windows(2) {
        let (a, b) = (stream[w[0]].timestamp, stream[w[1]].timestamp);
        if b - a > cfg.global_gap {
            global.push(Outage::global(a, b));
        }
    }
    if let Some(&last) = order.last() {
        let t = stream[last].timestamp;
        if now - t > cfg.global_gap {
            global.push(Outage::global(t, now));
        }
    }

    let mut by_vessel: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut cell_times: BTreeMap<GridCell, Vec<DateTime<Utc>>> = BTreeMap::new();
    for &i in &order {
        by_vessel.entry(stream[i].mmsi).or_default().push(i);
        cell_times.entry(GridCell::of(stream[i].position(), cfg.cell_deg)).or_default().push(stream[i].timestamp);
    }

    let mut silences = Vec::new();
    for (&mmsi, idx) in &by_vessel {
        for j in 2..idx.len() {
            let (t0, t1, t2) = (stream[idx[j - 2]].timestamp, stream[idx[j - 1]].timestamp, stream[idx[j]].timestamp);
            if t2 - t1 > cfg.vessel_gap && t1 - t0 < cfg.vessel_cadence && uncovered(t1, t2, &global) > cfg.vessel_gap {
                let cell = GridCell::of(stream[idx[j - 1]].position(), cfg.cell_deg);
                silences.push(Silence { mmsi, start: t1, end: t2, cell });
            }
        }
    }

    // Group silences of distinct vessels in one cell whose overlap is long enough.
    let mut parent: Vec<usize> = (0..silences.len()).collect();
    let mut by_cell: BTreeMap<GridCell, Vec<usize>> = BTreeMap::new();
    for (i, s) in silences.iter().enumerate() {
        by_cell.entry(s.cell).or_default().push(i);
    }
    for members in by_cell.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                let (sa, sb) = (&silences[a], &silences[b]);
                if sa.mmsi != sb.mmsi && sa.end.min(sb.end) - sa.start.max(sb.start) > cfg.area_gap {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..silences.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }

    let mut out = global.clone();
    let mut absorbed = vec![false; silences.len()];
    for members in groups.values().filter(|m| m.len() >= 2) {
        let cell = silences[members[0]].cell;
        let core_start = members.iter().map(|&i| silences[i].start).max().expect("non-empty");
        let core_end = members.iter().map(|&i| silences[i].end).min().expect("non-empty");
        if core_end - core_start <= cfg.area_gap {
            continue;
        }
        let times = &cell_times[&cell];
        let lo = times.partition_point(|&t| t <= core_start);
        let hi = times.partition_point(|&t| t < core_end);
        if lo < hi {
            continue;
        }
        let start = if lo > 0 { times[lo - 1] } else { core_start };
        let end = times.get(hi).copied().unwrap_or(core_end);
        if uncovered(start, end, &global) <= cfg.area_gap {
            continue;
        }
        for &i in members {
            absorbed[i] = true;
        }
        out.push(Outage { scope: OutageScope::Area, start, end, mmsi: None, cell: Some(cell) });
    }
    for (s, _) in silences.iter().zip(&absorbed).filter(|(_, &a)| !a) {
        out.push(Outage { scope: OutageScope::Vessel, start: s.start, end: s.end, mmsi: Some(s.mmsi), cell: None });
    }
    out.sort_by_key(|o| (o.start, o.end, o.scope, o.mmsi, o.cell));
    out
}
