use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{haversine_m, GeoError, LatLon};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AreaKind {
    Anchorage,
    Terminal,
}

impl fmt::Display for AreaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AreaKind::Anchorage => "anchorage",
            AreaKind::Terminal => "terminal",
        })
    }
}

/// Simple closed ring in lat/lon space (implicitly closed, no holes).
#[derive(Debug, Clone, PartialEq)]
pub struct Ring<T> {
    vertices: Vec<LatLon<T>>,
    min: LatLon<T>,
    max: LatLon<T>,
}

impl<T: Scalar> Ring<T> {
    /// Validates and builds a ring. A repeated closing vertex is dropped.
    pub fn new(name: &str, mut vertices: Vec<LatLon<T>>) -> Result<Self, GeoError> {
        let invalid = |reason: &str| GeoError::InvalidPolygon { name: name.to_string(), reason: reason.to_string() };
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(invalid("fewer than 3 vertices"));
        }
        if vertices.iter().any(|v| !v.lat.is_finite() || !v.lon.is_finite() || !v.is_valid()) {
            return Err(invalid("vertex outside valid lat/lon range"));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(invalid("consecutive identical vertices"));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                // Skip edges that share a vertex.
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, d) = (vertices[j], vertices[(j + 1) % n]);
                if segments_intersect(a, b, c, d) {
                    return Err(invalid("ring is self-intersecting"));
                }
            }
        }
        let mut min = vertices[0];
        let mut max = vertices[0];
        for v in &vertices {
            min.lat = min.lat.min(v.lat);
            min.lon = min.lon.min(v.lon);
            max.lat = max.lat.max(v.lat);
            max.lon = max.lon.max(v.lon);
        }
        Ok(Self { vertices, min, max })
    }

    pub fn vertices(&self) -> &[LatLon<T>] {
        &self.vertices
    }

    /// Even-odd rule in lat/lon space; points on an edge or vertex are inside.
    pub fn contains(&self, p: LatLon<T>) -> bool {
        if p.lat < self.min.lat || p.lat > self.max.lat || p.lon < self.min.lon || p.lon > self.max.lon {
            return false;
        }
        let n = self.vertices.len();
        let mut inside = false;
        let (px, py) = (p.lon, p.lat);
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(a, b, p) {
                return true;
            }
            let (xi, yi, xj, yj) = (a.lon, a.lat, b.lon, b.lat);
            if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                inside = !inside;
            }
        }
        inside
    }

    pub fn centroid(&self) -> LatLon<T> {
        let n = T::from_usize(self.vertices.len()).unwrap();
        let lat = self.vertices.iter().map(|v| v.lat).sum::<T>() / n;
        let lon = self.vertices.iter().map(|v| v.lon).sum::<T>() / n;
        LatLon { lat, lon }
    }

    fn coordinates_json(&self) -> Value {
        let mut coords: Vec<Value> = self.vertices.iter().map(|v| json!([v.lon.as_f64(), v.lat.as_f64()])).collect();
        coords.push(coords[0].clone());
        json!([coords])
    }
}

fn cross<T: Scalar>(o: LatLon<T>, a: LatLon<T>, b: LatLon<T>) -> T {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

fn on_segment<T: Scalar>(a: LatLon<T>, b: LatLon<T>, p: LatLon<T>) -> bool {
    let scale = a.lat.abs().max(a.lon.abs()).max(b.lat.abs()).max(b.lon.abs()).max(T::one());
    let tol = T::lit(1e-12).max(T::epsilon() * T::lit(4.0)) * scale;
    let len = ((b.lon - a.lon).powi(2) + (b.lat - a.lat).powi(2)).sqrt();
    if len == T::zero() {
        return (p.lat - a.lat).abs() <= tol && (p.lon - a.lon).abs() <= tol;
    }
    // Perpendicular distance to the supporting line.
    if (cross(a, b, p) / len).abs() > tol {
        return false;
    }
    p.lon >= a.lon.min(b.lon) - tol && p.lon <= a.lon.max(b.lon) + tol && p.lat >= a.lat.min(b.lat) - tol && p.lat <= a.lat.max(b.lat) + tol
}

fn segments_intersect<T: Scalar>(a: LatLon<T>, b: LatLon<T>, c: LatLon<T>, d: LatLon<T>) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    let z = T::zero();
    if ((d1 > z && d2 < z) || (d1 < z && d2 > z)) && ((d3 > z && d4 < z) || (d3 < z && d4 > z)) {
        return true;
    }
    (d1 == z && on_segment(c, d, a))
        || (d2 == z && on_segment(c, d, b))
        || (d3 == z && on_segment(a, b, c))
        || (d4 == z && on_segment(a, b, d))
}

/// Named anchorage or terminal area.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T> {
    pub name: String,
    pub kind: AreaKind,
    pub ring: Ring<T>,
}

impl<T: Scalar> Polygon<T> {
    pub fn new(name: impl Into<String>, kind: AreaKind, vertices: Vec<LatLon<T>>) -> Result<Self, GeoError> {
        let name = name.into();
        let ring = Ring::new(&name, vertices)?;
        Ok(Self { name, kind, ring })
    }

    pub fn contains(&self, p: LatLon<T>) -> bool {
        self.ring.contains(p)
    }
}

/// Anchorage and terminal polygons of a single port.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PortGeometry<T> {
    pub polygons: Vec<Polygon<T>>,
}

impl<T: Scalar> PortGeometry<T> {
    pub fn new(polygons: Vec<Polygon<T>>) -> Self {
        Self { polygons }
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// First terminal polygon containing `p`, in load order.
    pub fn terminal_at(&self, p: LatLon<T>) -> Option<&Polygon<T>> {
        self.polygons.iter().find(|poly| poly.kind == AreaKind::Terminal && poly.contains(p))
    }

    pub fn anchorage_at(&self, p: LatLon<T>) -> Option<&Polygon<T>> {
        self.polygons.iter().find(|poly| poly.kind == AreaKind::Anchorage && poly.contains(p))
    }

    /// Parses a GeoJSON `FeatureCollection` of `Polygon` features, each with
    /// string properties `name` and `kind` (`"anchorage"` or `"terminal"`).
    pub fn from_geojson(text: &str) -> Result<Self, GeoError> {
        let root: Value = serde_json::from_str(text).map_err(|e| GeoError::GeoJson(e.to_string()))?;
        if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
            return Err(GeoError::GeoJson("expected a FeatureCollection".into()));
        }
        let features = root.get("features").and_then(Value::as_array).ok_or_else(|| GeoError::GeoJson("missing features array".into()))?;
        let mut polygons = Vec::with_capacity(features.len());
        for (i, feature) in features.iter().enumerate() {
            let props = feature.get("properties").unwrap_or(&Value::Null);
            let name = props
                .get("name")
                .and_then(Value::as_str)
                .ok_or_else(|| GeoError::GeoJson(format!("feature {i}: missing string property `name`")))?;
            let kind = match props.get("kind").and_then(Value::as_str) {
                Some("anchorage") => AreaKind::Anchorage,
                Some("terminal") => AreaKind::Terminal,
                other => {
                    return Err(GeoError::GeoJson(format!(
                        "feature {i} ({name}): property `kind` must be \"anchorage\" or \"terminal\", got {other:?}"
                    )))
                }
            };
            let geometry = feature.get("geometry").ok_or_else(|| GeoError::GeoJson(format!("feature {i} ({name}): missing geometry")))?;
            let vertices = polygon_ring(geometry).map_err(|e| GeoError::GeoJson(format!("feature {i} ({name}): {e}")))?;
            polygons.push(Polygon::new(name, kind, vertices)?);
        }
        Ok(Self { polygons })
    }

    pub fn to_geojson(&self) -> Value {
        let features: Vec<Value> = self
            .polygons
            .iter()
            .map(|p| {
                json!({
                    "type": "Feature",
                    "properties": { "name": p.name, "kind": p.kind.to_string() },
                    "geometry": { "type": "Polygon", "coordinates": p.ring.coordinates_json() },
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }
}

/// Outer ring of a GeoJSON `Polygon` geometry as lat/lon vertices.
fn polygon_ring<T: Scalar>(geometry: &Value) -> Result<Vec<LatLon<T>>, String> {
    match geometry.get("type").and_then(Value::as_str) {
        Some("Polygon") => {}
        other => return Err(format!("geometry type must be Polygon, got {other:?}")),
    }
    let rings = geometry.get("coordinates").and_then(Value::as_array).ok_or("missing coordinates")?;
    match rings.len() {
        0 => return Err("polygon has no rings".into()),
        1 => {}
        _ => return Err("polygons with holes are not supported".into()),
    }
    let ring = rings[0].as_array().ok_or("ring is not an array")?;
    ring.iter()
        .map(|pos| {
            let pos = pos.as_array().ok_or("position is not an array")?;
            let lon = pos.first().and_then(Value::as_f64).ok_or("bad longitude")?;
            let lat = pos.get(1).and_then(Value::as_f64).ok_or("bad latitude")?;
            Ok(LatLon::new(T::lit(lat), T::lit(lon)))
        })
        .collect()
}

/// Region messages must fall in to take part in voyage extraction.
#[derive(Debug, Clone, PartialEq)]
pub enum AreaFilter<T> {
    All,
    Circle { center: LatLon<T>, radius_m: T },
    BBox { min: LatLon<T>, max: LatLon<T> },
    Ring(Ring<T>),
}

impl<T: Scalar> AreaFilter<T> {
    pub fn contains(&self, p: LatLon<T>) -> bool {
        match self {
            AreaFilter::All => true,
            AreaFilter::Circle { center, radius_m } => haversine_m(*center, p) <= *radius_m,
            AreaFilter::BBox { min, max } => p.lat >= min.lat && p.lat <= max.lat && p.lon >= min.lon && p.lon <= max.lon,
            AreaFilter::Ring(ring) => ring.contains(p),
        }
    }

    /// Uses the first `Polygon` geometry found in a GeoJSON document
    /// (`FeatureCollection`, `Feature` or bare geometry).
    pub fn from_geojson(text: &str) -> Result<Self, GeoError> {
        let root: Value = serde_json::from_str(text).map_err(|e| GeoError::GeoJson(e.to_string()))?;
        let geometry = match root.get("type").and_then(Value::as_str) {
            Some("FeatureCollection") => root
                .get("features")
                .and_then(Value::as_array)
                .and_then(|fs| fs.iter().filter_map(|f| f.get("geometry")).find(|g| g.get("type") == Some(&json!("Polygon"))))
                .ok_or_else(|| GeoError::GeoJson("no Polygon feature found".into()))?,
            Some("Feature") => root.get("geometry").ok_or_else(|| GeoError::GeoJson("feature without geometry".into()))?,
            _ => &root,
        };
        let vertices = polygon_ring(geometry).map_err(GeoError::GeoJson)?;
        Ok(AreaFilter::Ring(Ring::new("area", vertices)?))
    }
}

impl<T: Scalar> FromStr for AreaFilter<T> {
    type Err = GeoError;

    /// Accepts `all`, `circle:LAT,LON,RADIUS_M` or `bbox:MIN_LAT,MIN_LON,MAX_LAT,MAX_LON`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || GeoError::AreaSpec(s.to_string());
        if s.trim() == "all" {
            return Ok(AreaFilter::All);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let nums: Vec<f64> = rest.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        match (kind.trim(), nums.as_slice()) {
            ("circle", &[lat, lon, r]) if r > 0.0 => {
                Ok(AreaFilter::Circle { center: LatLon::new(T::lit(lat), T::lit(lon)), radius_m: T::lit(r) })
            }
            ("bbox", &[a, b, c, d]) if a <= c && b <= d => {
                Ok(AreaFilter::BBox { min: LatLon::new(T::lit(a), T::lit(b)), max: LatLon::new(T::lit(c), T::lit(d)) })
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ll(lat: f64, lon: f64) -> LatLon<f64> {
        LatLon::new(lat, lon)
    }

    fn unit_square() -> Ring<f64> {
        Ring::new("sq", vec![ll(0.0, 0.0), ll(0.0, 1.0), ll(1.0, 1.0), ll(1.0, 0.0)]).unwrap()
    }

    #[test]
    fn square_membership() {
        let sq = unit_square();
        assert!(sq.contains(ll(0.5, 0.5)));
        assert!(!sq.contains(ll(2.0, 2.0)));
        assert!(sq.contains(ll(0.0, 0.5)));
        assert!(sq.contains(ll(0.5, 1.0)));
        assert!(sq.contains(ll(1.0, 1.0)));
        assert!(!sq.contains(ll(-1e-6, 0.5)));
    }

    #[test]
    fn ring_validation() {
        let err = Ring::new("x", vec![ll(0.0, 0.0), ll(1.0, 1.0)]).unwrap_err();
        assert!(matches!(err, GeoError::InvalidPolygon { .. }));
        let dup = Ring::new("x", vec![ll(0.0, 0.0), ll(0.0, 0.0), ll(1.0, 1.0), ll(1.0, 0.0)]);
        assert!(dup.is_err());
        // Bow tie.
        let bow = Ring::new("x", vec![ll(0.0, 0.0), ll(1.0, 1.0), ll(1.0, 0.0), ll(0.0, 1.0)]);
        assert!(bow.is_err());
        // Explicitly closed ring is fine.
        let closed = Ring::new("x", vec![ll(0.0, 0.0), ll(0.0, 1.0), ll(1.0, 1.0), ll(0.0, 0.0)]).unwrap();
        assert_eq!(closed.vertices().len(), 3);
    }

    /// Independent membership oracle for a convex ring: inside iff the point
    /// is on the same side of (or on) every edge.
    fn convex_oracle(ring: &[LatLon<f64>], p: LatLon<f64>) -> bool {
        let n = ring.len();
        let signs: Vec<f64> = (0..n).map(|i| cross(ring[i], ring[(i + 1) % n], p)).collect();
        signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
    }

    #[test]
    fn rasterized_boundary_agrees_with_oracle() {
        // Grid with spacing that lands exactly on the square's edges.
        let sq = unit_square();
        for i in -8..=24 {
            for j in -8..=24 {
                let p = ll(i as f64 / 16.0, j as f64 / 16.0);
                assert_eq!(sq.contains(p), convex_oracle(sq.vertices(), p), "{p:?}");
            }
        }
        // Triangle with a sloped edge, rasterized on a dyadic grid.
        let tri = Ring::new("t", vec![ll(0.0, 0.0), ll(0.0, 4.0), ll(4.0, 0.0)]).unwrap();
        for i in -4..=36 {
            for j in -4..=36 {
                let p = ll(i as f64 / 8.0, j as f64 / 8.0);
                assert_eq!(tri.contains(p), convex_oracle(tri.vertices(), p), "{p:?}");
            }
        }
    }

    #[test]
    fn concave_ring() {
        // U shape opening north.
        let u = Ring::new(
            "u",
            vec![ll(0.0, 0.0), ll(0.0, 3.0), ll(3.0, 3.0), ll(3.0, 2.0), ll(1.0, 2.0), ll(1.0, 1.0), ll(3.0, 1.0), ll(3.0, 0.0)],
        )
        .unwrap();
        assert!(u.contains(ll(0.5, 1.5)));
        assert!(!u.contains(ll(2.0, 1.5)));
        assert!(u.contains(ll(2.0, 0.5)));
        assert!(u.contains(ll(2.0, 2.5)));
        assert!(u.contains(ll(1.0, 1.5)));
    }

    #[test]
    fn geojson_round_trip_and_errors() {
        let text = r#"{"type":"FeatureCollection","features":[
            {"type":"Feature","properties":{"name":"A1","kind":"anchorage"},
             "geometry":{"type":"Polygon","coordinates":[[[23.5,37.9],[23.6,37.9],[23.6,38.0],[23.5,38.0],[23.5,37.9]]]}},
            {"type":"Feature","properties":{"name":"T1","kind":"terminal"},
             "geometry":{"type":"Polygon","coordinates":[[[23.61,37.94],[23.62,37.94],[23.62,37.95]]]}}]}"#;
        let port: PortGeometry<f64> = PortGeometry::from_geojson(text).unwrap();
        assert_eq!(port.polygons.len(), 2);
        assert_eq!(port.polygons[0].kind, AreaKind::Anchorage);
        assert!(port.anchorage_at(ll(37.95, 23.55)).is_some());
        assert!(port.terminal_at(ll(37.95, 23.55)).is_none());
        let again = PortGeometry::<f64>::from_geojson(&port.to_geojson().to_string()).unwrap();
        assert_eq!(again, port);

        let bad_kind = text.replace("\"terminal\"", "\"berth\"");
        assert!(PortGeometry::<f64>::from_geojson(&bad_kind).is_err());
        assert!(PortGeometry::<f64>::from_geojson("{not json").is_err());
        assert!(PortGeometry::<f64>::from_geojson(r#"{"type":"Feature"}"#).is_err());
    }

    #[test]
    fn area_filter_specs() {
        let c: AreaFilter<f64> = "circle:37.94,23.62,1000".parse().unwrap();
        assert!(c.contains(ll(37.94, 23.62)));
        assert!(!c.contains(ll(38.0, 23.62)));
        let b: AreaFilter<f64> = "bbox:37,23,38,24".parse().unwrap();
        assert!(b.contains(ll(37.5, 23.5)));
        assert!(!b.contains(ll(36.5, 23.5)));
        assert!("circle:1,2".parse::<AreaFilter<f64>>().is_err());
        assert!("bbox:2,2,1,1".parse::<AreaFilter<f64>>().is_err());
        assert_eq!("all".parse::<AreaFilter<f64>>().unwrap(), AreaFilter::All);
    }

    proptest! {
        #[test]
        fn translation_invariance(
            dlat in -40.0f64..40.0, dlon in -100.0f64..100.0,
            plat in -0.5f64..1.5, plon in -0.5f64..1.5,
        ) {
            // Dyadic offsets keep the translated coordinates exactly representable.
            let q = |v: f64| (v * 64.0).round() / 64.0;
            let (dlat, dlon, plat, plon) = (q(dlat), q(dlon), q(plat), q(plon));
            let base = vec![ll(0.0, 0.0), ll(0.0, 1.0), ll(0.5, 1.25), ll(1.0, 1.0), ll(1.0, 0.0)];
            let moved: Vec<_> = base.iter().map(|v| ll(v.lat + dlat, v.lon + dlon)).collect();
            let a = Ring::new("a", base).unwrap();
            let b = Ring::new("b", moved).unwrap();
            prop_assert_eq!(a.contains(ll(plat, plon)), b.contains(ll(plat + dlat, plon + dlon)));
        }
    }
}
