//! Geospatial and angular primitives.
//!
//! Everything here is generic over [`Scalar`]; positions are `(lat, lon)` in
//! degrees and distances are meters.

mod heading;
mod polygon;

pub use heading::{encode_heading, mean_resultant_length, EncodedHeading};
pub use polygon::{AreaFilter, AreaKind, Polygon, PortGeometry, Ring};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Mean Earth radius used for all distance computations.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Largest latitude offset from the projection origin accepted by
/// [`project_local`].
pub const MAX_PROJECTION_EXTENT_DEG: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("heading unavailable")]
    UnavailableHeading,
    #[error("point is {0:.3} deg of latitude from the projection origin (limit {MAX_PROJECTION_EXTENT_DEG})")]
    OutOfExtent(f64),
    #[error("invalid polygon {name:?}: {reason}")]
    InvalidPolygon { name: String, reason: String },
    #[error("invalid GeoJSON: {0}")]
    GeoJson(String),
    #[error("invalid area specification: {0}")]
    AreaSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatLon<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Scalar> LatLon<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.abs() <= T::lit(90.0) && self.lon.abs() <= T::lit(180.0)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m<T: Scalar>(a: LatLon<T>, b: LatLon<T>) -> T {
    let r = T::lit(EARTH_RADIUS_M);
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let half = T::lit(0.5);
    let h = (dphi * half).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda * half).sin().powi(2);
    // Rounding can push h marginally outside [0, 1].
    let h = h.max(T::zero()).min(T::one());
    T::lit(2.0) * r * h.sqrt().asin()
}

/// Longitude difference wrapped into [-180, 180).
fn wrap_dlon<T: Scalar>(dlon: T) -> T {
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    let mut d = dlon;
    if d >= half || d < -half {
        d = (d + half) % full;
        if d < T::zero() {
            d += full;
        }
        d -= half;
    }
    d
}

/// Equirectangular projection of `p` around `origin`, without the extent check.
pub fn equirectangular<T: Scalar>(origin: LatLon<T>, p: LatLon<T>) -> (T, T) {
    let r = T::lit(EARTH_RADIUS_M);
    let x = r * wrap_dlon(p.lon - origin.lon).to_radians() * origin.lat.to_radians().cos();
    let y = r * (p.lat - origin.lat).to_radians();
    (x, y)
}

/// Local planar `(x, y)` meters of `p` relative to `origin` (x east, y north).
pub fn project_local<T: Scalar>(origin: LatLon<T>, p: LatLon<T>) -> Result<(T, T), GeoError> {
    let dlat = (p.lat - origin.lat).abs();
    if dlat >= T::lit(MAX_PROJECTION_EXTENT_DEG) {
        return Err(GeoError::OutOfExtent(dlat.as_f64()));
    }
    Ok(equirectangular(origin, p))
}

/// Inverse of [`equirectangular`].
pub fn unproject_local<T: Scalar>(origin: LatLon<T>, x: T, y: T) -> LatLon<T> {
    let r = T::lit(EARTH_RADIUS_M);
    let lat = origin.lat + (y / r).to_degrees();
    let lon = origin.lon + (x / (r * origin.lat.to_radians().cos())).to_degrees();
    LatLon { lat, lon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ll(lat: f64, lon: f64) -> LatLon<f64> {
        LatLon::new(lat, lon)
    }

    #[test]
    fn haversine_identity_and_equator_degree() {
        assert_eq!(haversine_m(ll(37.9, 23.6), ll(37.9, 23.6)), 0.0);
        // One degree of arc along the equator is 2*pi*R/360.
        let expected = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        let d = haversine_m(ll(0.0, 0.0), ll(0.0, 1.0));
        assert!((d - expected).abs() < 1e-6, "{d} vs {expected}");
        assert!((d - 111_195.0).abs() < 1.0);
    }

    #[test]
    fn haversine_f32_close_to_f64() {
        let d64 = haversine_m(ll(37.9, 23.6), ll(37.95, 23.7));
        let d32 = haversine_m(LatLon::new(37.9f32, 23.6), LatLon::new(37.95f32, 23.7));
        assert!((d64 - d32 as f64).abs() / d64 < 1e-3);
    }

    #[test]
    fn projection_basics() {
        let o = ll(37.9, 23.6);
        assert_eq!(project_local(o, o).unwrap(), (0.0, 0.0));
        let (x, y) = project_local(o, ll(38.9, 23.6)).unwrap();
        assert_eq!(x, 0.0);
        let expected = 2.0 * std::f64::consts::PI * EARTH_RADIUS_M / 360.0;
        assert!((y - expected).abs() < 1e-6);
        assert!(matches!(project_local(o, ll(40.0, 23.6)), Err(GeoError::OutOfExtent(_))));
    }

    #[test]
    fn projection_wraps_antimeridian() {
        let o = ll(0.0, 179.9);
        let (x, _) = project_local(o, ll(0.0, -179.9)).unwrap();
        assert!(x > 0.0 && x < 30_000.0, "{x}");
    }

    #[test]
    fn projection_matches_haversine_within_one_percent_on_grid() {
        // Brute-force grid: every point within 20 km of the origin.
        for &origin in &[ll(0.0, 0.0), ll(37.94, 23.62), ll(60.0, 5.0), ll(-33.9, 18.4)] {
            let step_m = 1_000.0;
            let mut i = -20;
            while i <= 20 {
                let mut j = -20;
                while j <= 20 {
                    let p = unproject_local(origin, i as f64 * step_m, j as f64 * step_m);
                    let h = haversine_m(origin, p);
                    if h > 0.0 && h < 20_000.0 {
                        let (x, y) = project_local(origin, p).unwrap();
                        let planar = (x * x + y * y).sqrt();
                        assert!((planar - h).abs() / h < 0.01, "origin {origin:?} p {p:?}: {planar} vs {h}");
                    }
                    j += 1;
                }
                i += 1;
            }
        }
    }

    proptest! {
        #[test]
        fn haversine_metric_properties(
            a in (-80.0f64..80.0, -179.0f64..179.0),
            b in (-80.0f64..80.0, -179.0f64..179.0),
            c in (-80.0f64..80.0, -179.0f64..179.0),
        ) {
            let (a, b, c) = (ll(a.0, a.1), ll(b.0, b.1), ll(c.0, c.1));
            let ab = haversine_m(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_m(b, a)).abs() < 1e-6);
            prop_assert!(ab <= haversine_m(a, c) + haversine_m(c, b) + 1e-6);
            prop_assert_eq!(haversine_m(a, a), 0.0);
            if a != b && (a.lat - b.lat).abs() + (a.lon - b.lon).abs() > 1e-6 {
                prop_assert!(ab > 0.0);
            }
        }

        #[test]
        fn unproject_inverts_projection(dx in -20_000.0f64..20_000.0, dy in -20_000.0f64..20_000.0) {
            let o = ll(37.94, 23.62);
            let p = unproject_local(o, dx, dy);
            let (x, y) = project_local(o, p).unwrap();
            prop_assert!((x - dx).abs() < 1e-6 && (y - dy).abs() < 1e-6);
        }
    }
}
