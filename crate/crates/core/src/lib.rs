//! Port-area vessel movement analytics from AIS data.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`codec`] turns NMEA `!AIVDM` lines into typed position and static reports.
//! 2. [`validate`] corrects the navigational status of every position report
//!    using geofences, heading rotation, or a k-nearest-neighbour model, and
//!    finds data outages.
//! 3. [`voyage`] groups validated messages into per-visit voyages and splits
//!    them into underway / anchored / moored phases.
//! 4. [`metrics`] derives turnaround, anchorage waiting time, daily arrivals
//!    and error against ground-truth port-call records.
//!
//! [`ingest`] feeds the pipeline from a live TCP feed or a stored capture, and
//! [`synth`] produces synthetic port traffic with a known truth log.
//!
//! The geometric core ([`geo`], [`validate::knn`]) is generic over the
//! [`Scalar`] float type; the aliases below fix it to `f64`, which is what the
//! rest of the pipeline uses.

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod scalar;
pub mod synth;
pub mod validate;
pub mod voyage;

pub use scalar::Scalar;

pub use codec::{AisMessage, CorrectedStatus, NavStatus, PositionReport, StaticReport};
pub use validate::{ValidatedMessage, ValidationConfig};
pub use voyage::{Phase, PhaseKind, Voyage};

/// Latitude/longitude pair in degrees.
pub type LatLon = geo::LatLon<f64>;
/// Anchorage or terminal polygon.
pub type Polygon = geo::Polygon<f64>;
/// Sine/cosine encoding of a heading.
pub type EncodedHeading = geo::EncodedHeading<f64>;
/// All anchorage and terminal polygons of one port.
pub type PortGeometry = geo::PortGeometry<f64>;
/// Port-area filter used before voyage extraction.
pub type AreaFilter = geo::AreaFilter<f64>;
/// Fitted k-nearest-neighbour status classifier.
pub type KnnModel = validate::knn::KnnModel<f64>;
