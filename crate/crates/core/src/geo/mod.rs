//! Geospatial primitives shared by every other module: points, distances,
//! geohash cells, regions, sampling grids and the POI index.

pub mod geohash;
mod poi;
mod region;

pub use poi::{pois_within_radius, Poi, PoiHierarchy, PoiIndex, PoiRecord, PoiType, FAST_FOOD, RESTAURANT, SPORTS_FACILITY};
pub use region::{grid_points, point_in_region, BBox, Region, RegionKind, RegionShape};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude for the local equirectangular projection.
pub const METERS_PER_DEG_LAT: f64 = 111_320.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidPoint { lat: f64, lon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("geohash parse error: {0}")]
    Geohash(String),
    #[error("invalid region {id}: {reason}")]
    InvalidRegion { id: String, reason: String },
    #[error("unknown POI type `{0}`")]
    UnknownPoiType(String),
    #[error("invalid POI hierarchy: {0}")]
    InvalidHierarchy(String),
}

/// WGS84 coordinate in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint")]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

#[derive(Deserialize)]
struct RawPoint {
    lat: f64,
    lon: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lon)
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if lat.is_nan() || lon.is_nan() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidPoint { lat, lon });
        }
        Ok(Self { lat, lon })
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    if a == b {
        return 0.0;
    }
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Meters per degree of longitude at the given latitude (equirectangular).
pub fn meters_per_deg_lon(lat: f64) -> f64 {
    METERS_PER_DEG_LAT * lat.to_radians().cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn rejects_out_of_range_and_nan() {
        assert!(GeoPoint::new(91.0, 0.0).is_err());
        assert!(GeoPoint::new(0.0, -180.5).is_err());
        assert!(GeoPoint::new(f64::NAN, 0.0).is_err());
        assert!(serde_json::from_str::<GeoPoint>(r#"{"lat":95,"lon":0}"#).is_err());
    }

    #[test]
    fn haversine_identity_and_equator_degree() {
        assert_eq!(haversine_m(pt(10.0, 20.0), pt(10.0, 20.0)), 0.0);
        // One degree of arc on the equator: R * pi / 180.
        let expected = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let d = haversine_m(pt(0.0, 0.0), pt(0.0, 1.0));
        assert!((d - expected).abs() < 1e-6);
        assert!((d - 111_195.0).abs() < 1.0);
    }

    fn any_point() -> impl Strategy<Value = GeoPoint> {
        (-90.0f64..=90.0, -180.0f64..=180.0).prop_map(|(lat, lon)| pt(lat, lon))
    }

    proptest! {
        #[test]
        fn haversine_is_a_metric(a in any_point(), b in any_point(), c in any_point()) {
            let ab = haversine_m(a, b);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - haversine_m(b, a)).abs() < 1e-6);
            prop_assert!(ab <= haversine_m(a, c) + haversine_m(c, b) + 1e-6);
            if a != b {
                prop_assert!(ab > 0.0 || (a.lat.abs() == 90.0 && a.lat == b.lat));
            }
        }
    }
}
