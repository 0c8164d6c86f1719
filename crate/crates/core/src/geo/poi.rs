use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{haversine_m, GeoError, GeoPoint, EARTH_RADIUS_M};

/// Slash-separated path in the POI category tree, e.g. `food/restaurant`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoiType(pub String);

impl PoiType {
    pub fn new(path: impl Into<String>) -> Self {
        Self(path.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when `self` equals `filter` or is one of its descendants.
    pub fn is_under(&self, filter: &PoiType) -> bool {
        self.0 == filter.0 || (self.0.starts_with(&filter.0) && self.0.as_bytes().get(filter.0.len()) == Some(&b'/'))
    }

    pub fn parent(&self) -> Option<PoiType> {
        self.0.rfind('/').map(|i| PoiType(self.0[..i].to_string()))
    }
}

impl fmt::Display for PoiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub const FAST_FOOD: &str = "food/fast_food_or_takeaway";
pub const RESTAURANT: &str = "food/restaurant";
pub const SPORTS_FACILITY: &str = "recreation/sports_facility";

/// Closed tree of POI categories. Every path's parent must be present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct PoiHierarchy {
    paths: BTreeSet<String>,
}

impl TryFrom<Vec<String>> for PoiHierarchy {
    type Error = GeoError;

    fn try_from(paths: Vec<String>) -> Result<Self, GeoError> {
        PoiHierarchy::new(paths)
    }
}

impl From<PoiHierarchy> for Vec<String> {
    fn from(h: PoiHierarchy) -> Self {
        h.paths.into_iter().collect()
    }
}

impl Default for PoiHierarchy {
    fn default() -> Self {
        let paths = [
            "food",
            RESTAURANT,
            FAST_FOOD,
            "food/cafe",
            "recreation",
            SPORTS_FACILITY,
            "recreation/park",
            "education",
            "education/school",
            "retail",
            "retail/grocery",
        ];
        PoiHierarchy::new(paths.iter().map(|s| s.to_string()).collect()).expect("default hierarchy is valid")
    }
}

impl PoiHierarchy {
    pub fn new(paths: Vec<String>) -> Result<Self, GeoError> {
        let set: BTreeSet<String> = paths.into_iter().collect();
        for p in &set {
            if p.is_empty() || p.split('/').any(str::is_empty) {
                return Err(GeoError::InvalidHierarchy(format!("malformed path `{p}`")));
            }
            if let Some(parent) = PoiType(p.clone()).parent() {
                if !set.contains(&parent.0) {
                    return Err(GeoError::InvalidHierarchy(format!("`{p}` has no parent `{parent}`")));
                }
            }
        }
        for required in [RESTAURANT, FAST_FOOD, SPORTS_FACILITY] {
            if !set.contains(required) {
                return Err(GeoError::InvalidHierarchy(format!("required type `{required}` missing")));
            }
        }
        Ok(Self { paths: set })
    }

    pub fn contains(&self, t: &PoiType) -> bool {
        self.paths.contains(&t.0)
    }

    pub fn check(&self, t: &PoiType) -> Result<(), GeoError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(GeoError::UnknownPoiType(t.0.clone()))
        }
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.paths.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoiRecord", into = "PoiRecord")]
pub struct Poi {
    pub id: String,
    pub poi_type: PoiType,
    pub location: GeoPoint,
    pub name: Option<String>,
}

/// One line of the POI dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoiRecord {
    pub id: String,
    pub type_path: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl TryFrom<PoiRecord> for Poi {
    type Error = GeoError;

    fn try_from(r: PoiRecord) -> Result<Self, GeoError> {
        Ok(Poi { id: r.id, poi_type: PoiType(r.type_path), location: GeoPoint::new(r.lat, r.lon)?, name: r.name })
    }
}

impl From<Poi> for PoiRecord {
    fn from(p: Poi) -> Self {
        PoiRecord { id: p.id, type_path: p.poi_type.0, lat: p.location.lat, lon: p.location.lon, name: p.name }
    }
}

/// Build-once POI index. Points are kept sorted by latitude so a radius query
/// only scans the latitude band that can possibly fall inside the circle.
#[derive(Debug, Clone, Default)]
pub struct PoiIndex {
    pois: Vec<Poi>,
}

impl PoiIndex {
    pub fn new(mut pois: Vec<Poi>) -> Self {
        pois.sort_by(|a, b| a.location.lat.total_cmp(&b.location.lat).then_with(|| a.id.cmp(&b.id)));
        Self { pois }
    }

    /// Builds the index after checking every type against the hierarchy.
    pub fn with_hierarchy(pois: Vec<Poi>, hierarchy: &PoiHierarchy) -> Result<Self, GeoError> {
        for p in &pois {
            hierarchy.check(&p.poi_type)?;
        }
        Ok(Self::new(pois))
    }

    pub fn len(&self) -> usize {
        self.pois.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pois.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Poi> {
        self.pois.iter()
    }

    /// POIs within `radius_m` (inclusive) of `center`, sorted by distance then id.
    pub fn within_radius(&self, center: GeoPoint, radius_m: f64, filter: Option<&PoiType>) -> Vec<(&Poi, f64)> {
        if !(radius_m >= 0.0) {
            return Vec::new();
        }
        // Any point within radius differs in latitude by at most radius / R radians.
        let band = (radius_m / EARTH_RADIUS_M).to_degrees() * (1.0 + 1e-9) + 1e-12;
        let lo = self.pois.partition_point(|p| p.location.lat < center.lat - band);
        let mut hits: Vec<(&Poi, f64)> = self.pois[lo..]
            .iter()
            .take_while(|p| p.location.lat <= center.lat + band)
            .filter(|p| filter.is_none_or(|f| p.poi_type.is_under(f)))
            .filter_map(|p| {
                let d = haversine_m(center, p.location);
                (d <= radius_m).then_some((p, d))
            })
            .collect();
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.id.cmp(&b.0.id)));
        hits
    }

    pub fn nearest_within(&self, center: GeoPoint, radius_m: f64, filter: Option<&PoiType>) -> Option<(&Poi, f64)> {
        self.within_radius(center, radius_m, filter).into_iter().next()
    }
}

/// Free-function form of [`PoiIndex::within_radius`] returning owned POIs.
pub fn pois_within_radius(idx: &PoiIndex, center: GeoPoint, radius_m: f64, filter: Option<&PoiType>) -> Vec<Poi> {
    idx.within_radius(center, radius_m, filter).into_iter().map(|(p, _)| p.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poi(id: &str, t: &str, lat: f64, lon: f64) -> Poi {
        Poi { id: id.into(), poi_type: PoiType::new(t), location: GeoPoint::new(lat, lon).unwrap(), name: None }
    }

    #[test]
    fn type_matching_follows_tree() {
        let food = PoiType::new("food");
        assert!(PoiType::new(FAST_FOOD).is_under(&food));
        assert!(food.is_under(&food));
        assert!(!PoiType::new("foodtruck").is_under(&food));
        assert!(!food.is_under(&PoiType::new(RESTAURANT)));
    }

    #[test]
    fn hierarchy_validation() {
        assert!(PoiHierarchy::default().contains(&PoiType::new(FAST_FOOD)));
        let missing_parent = vec!["food/restaurant".to_string()];
        assert!(PoiHierarchy::new(missing_parent).is_err());
        let missing_required = vec!["food".to_string(), "food/restaurant".to_string()];
        assert!(PoiHierarchy::new(missing_required).is_err());
        let idx = PoiIndex::with_hierarchy(vec![poi("a", "food/sushi", 0.0, 0.0)], &PoiHierarchy::default());
        assert!(matches!(idx, Err(GeoError::UnknownPoiType(_))));
    }

    #[test]
    fn record_format() {
        let line = r#"{"id":"p1","type_path":"food/restaurant","lat":40.5,"lon":22.9}"#;
        let p: Poi = serde_json::from_str(line).unwrap();
        assert_eq!(p.poi_type.as_str(), RESTAURANT);
        assert_eq!(serde_json::to_string(&p).unwrap(), line);
    }

    #[test]
    fn radius_edge_cases() {
        let empty = PoiIndex::default();
        let c = GeoPoint::new(40.0, 22.0).unwrap();
        assert!(pois_within_radius(&empty, c, 100.0, None).is_empty());
        let idx = PoiIndex::new(vec![poi("here", RESTAURANT, 40.0, 22.0)]);
        assert_eq!(pois_within_radius(&idx, c, 0.0, None).len(), 1);
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..1000 {
            let n = rng.random_range(0..100);
            let types = [RESTAURANT, FAST_FOOD, SPORTS_FACILITY];
            let base = (rng.random_range(-80.0..80.0), rng.random_range(-179.0..179.0));
            let pois: Vec<Poi> = (0..n)
                .map(|i| {
                    let t = types[rng.random_range(0..3)];
                    poi(&format!("p{i:03}"), t, base.0 + rng.random_range(-0.003..0.003), base.1 + rng.random_range(-0.003..0.003))
                })
                .collect();
            let idx = PoiIndex::new(pois.clone());
            let center = GeoPoint::new(base.0 + rng.random_range(-0.002..0.002), base.1).unwrap();
            let radius = rng.random_range(0.0..200.0);
            let filter = (trial % 2 == 0).then(|| PoiType::new("food"));
            let got: Vec<String> = pois_within_radius(&idx, center, radius, filter.as_ref()).into_iter().map(|p| p.id).collect();
            let mut want: Vec<(f64, String)> = pois
                .iter()
                .filter(|p| filter.as_ref().is_none_or(|f| p.poi_type.is_under(f)))
                .map(|p| (haversine_m(center, p.location), p.id.clone()))
                .filter(|(d, _)| *d <= radius)
                .collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            let want: Vec<String> = want.into_iter().map(|(_, id)| id).collect();
            assert_eq!(got, want, "trial {trial}");
        }
    }
}
