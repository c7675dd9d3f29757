//! k-nearest-neighbour status classifier on projected vessel positions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::codec::CorrectedStatus;
use crate::geo::{equirectangular, LatLon};
use crate::Scalar;

use super::ValidateError;

pub const DEFAULT_K: usize = 300;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPoint<T> {
    pub x: T,
    pub y: T,
    pub label: CorrectedStatus,
}

/// Immutable after fitting; share freely between threads.
#[derive(Debug, Clone)]
pub struct KnnModel<T> {
    origin: LatLon<T>,
    k: usize,
    points: Vec<TrainingPoint<T>>,
    /// Point indices arranged as an implicit kd-tree.
    order: Vec<u32>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    d2: T,
    idx: u32,
}

impl<T: Scalar> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Candidate<T> {}

impl<T: Scalar> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.partial_cmp(&other.d2).unwrap_or(Ordering::Equal).then(self.idx.cmp(&other.idx))
    }
}

impl<T: Scalar> KnnModel<T> {
    /// Fits on labelled positions. Labels must be at-anchor or moored; the
    /// projection origin is the centroid of the training positions.
    pub fn fit(samples: &[(LatLon<T>, CorrectedStatus)], k: usize) -> Result<Self, ValidateError> {
        if k == 0 || k > samples.len() {
            return Err(ValidateError::TooFewPoints { points: samples.len(), k });
        }
        if samples.len() > u32::MAX as usize {
            return Err(ValidateError::TooFewPoints { points: samples.len(), k });
        }
        if let Some((_, bad)) = samples.iter().find(|(_, l)| !l.is_stopped()) {
            return Err(ValidateError::InvalidLabel(bad.code()));
        }
        let n = T::from_usize(samples.len()).expect("count fits scalar");
        let origin = LatLon::new(samples.iter().map(|(p, _)| p.lat).sum::<T>() / n, samples.iter().map(|(p, _)| p.lon).sum::<T>() / n);
        let points: Vec<TrainingPoint<T>> = samples
            .iter()
            .map(|&(p, label)| {
                let (x, y) = equirectangular(origin, p);
                TrainingPoint { x, y, label }
            })
            .collect();
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(&points, &mut order, 0);
        Ok(Self { origin, k, points, order })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn origin(&self) -> LatLon<T> {
        self.origin
    }

    pub fn points(&self) -> &[TrainingPoint<T>] {
        &self.points
    }

    pub fn project(&self, p: LatLon<T>) -> (T, T) {
        equirectangular(self.origin, p)
    }

    /// Indices of the `k` training points nearest to `p`, ordered by
    /// (squared distance, index).
    pub fn neighbors(&self, p: LatLon<T>) -> Vec<usize> {
        let (qx, qy) = self.project(p);
        let mut heap = BinaryHeap::with_capacity(self.k + 1);
        self.search(qx, qy, 0, self.order.len(), 0, &mut heap);
        let mut found: Vec<Candidate<T>> = heap.into_vec();
        found.sort();
        found.into_iter().map(|c| c.idx as usize).collect()
    }

    /// Majority label of the `k` nearest training points; ties go to at-anchor.
    pub fn predict(&self, p: LatLon<T>) -> CorrectedStatus {
        let moored = self.neighbors(p).into_iter().filter(|&i| self.points[i].label == CorrectedStatus::Moored).count();
        if 2 * moored > self.k {
            CorrectedStatus::Moored
        } else {
            CorrectedStatus::AtAnchor
        }
    }

    fn offer(&self, qx: T, qy: T, idx: u32, heap: &mut BinaryHeap<Candidate<T>>) {
        let p = &self.points[idx as usize];
        let (dx, dy) = (qx - p.x, qy - p.y);
        let cand = Candidate { d2: dx * dx + dy * dy, idx };
        if heap.len() < self.k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap is full") {
            heap.pop();
            heap.push(cand);
        }
    }

    fn search(&self, qx: T, qy: T, lo: usize, hi: usize, depth: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        if hi - lo <= LEAF_SIZE {
            for &idx in &self.order[lo..hi] {
                self.offer(qx, qy, idx, heap);
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx as usize];
        let diff = if depth.is_multiple_of(2) { qx - p.x } else { qy - p.y };
        let (near, far) = if diff < T::zero() { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(qx, qy, near.0, near.1, depth + 1, heap);
        self.offer(qx, qy, idx, heap);
        // Points on the far side are at least |diff| away; equality must still
        // be visited so that index tie-breaks match a full scan.
        if heap.len() < self.k || diff * diff <= heap.peek().expect("non-empty").d2 {
            self.search(qx, qy, far.0, far.1, depth + 1, heap);
        }
    }
}

fn axis_value<T: Scalar>(p: &TrainingPoint<T>, depth: usize) -> T {
    if depth.is_multiple_of(2) {
        p.x
    } else {
        p.y
    }
}

fn build<T: Scalar>(points: &[TrainingPoint<T>], order: &mut [u32], depth: usize) {
    if order.len() <= LEAF_SIZE {
        return;
    }
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        axis_value(&points[a as usize], depth)
            .partial_cmp(&axis_value(&points[b as usize], depth))
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let (left, rest) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut rest[1..], depth + 1);
}
