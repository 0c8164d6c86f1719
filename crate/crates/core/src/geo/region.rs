use serde::{Deserialize, Serialize};

use super::{geohash, meters_per_deg_lon, GeoError, GeoPoint, METERS_PER_DEG_LAT};

/// Axis-aligned lat/lon box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BBox {
    /// Half-open containment; the outer edges of the globe are closed.
    pub fn contains(&self, p: GeoPoint) -> bool {
        let lat_ok = p.lat >= self.lat_min && (p.lat < self.lat_max || (self.lat_max == 90.0 && p.lat == 90.0));
        let lon_ok = p.lon >= self.lon_min && (p.lon < self.lon_max || (self.lon_max == 180.0 && p.lon == 180.0));
        lat_ok && lon_ok
    }

    pub fn contains_closed(&self, p: GeoPoint) -> bool {
        (self.lat_min..=self.lat_max).contains(&p.lat) && (self.lon_min..=self.lon_max).contains(&p.lon)
    }

    pub fn center(&self) -> GeoPoint {
        GeoPoint { lat: (self.lat_min + self.lat_max) / 2.0, lon: (self.lon_min + self.lon_max) / 2.0 }
    }

    fn of_points(points: &[GeoPoint]) -> BBox {
        let mut b = BBox { lat_min: f64::MAX, lat_max: f64::MIN, lon_min: f64::MAX, lon_max: f64::MIN };
        for p in points {
            b.lat_min = b.lat_min.min(p.lat);
            b.lat_max = b.lat_max.max(p.lat);
            b.lon_min = b.lon_min.min(p.lon);
            b.lon_max = b.lon_max.max(p.lon);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegionShape {
    Geohash(String),
    /// Closed ring, first point equal to last.
    Polygon(Vec<GeoPoint>),
}

/// Geographic aggregation unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionRecord", into = "RegionRecord")]
pub struct Region {
    pub id: String,
    pub shape: RegionShape,
    pub name: Option<String>,
    bbox: BBox,
}

/// On-disk form: `{"id":..,"kind":"geohash","geohash":..}` or
/// `{"id":..,"kind":"polygon","polygon":[[lat,lon],..]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegionRecord {
    id: String,
    kind: RegionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    geohash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    polygon: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Geohash,
    Polygon,
}

impl TryFrom<RegionRecord> for Region {
    type Error = GeoError;

    fn try_from(r: RegionRecord) -> Result<Self, GeoError> {
        let bad = |reason: &str| GeoError::InvalidRegion { id: r.id.clone(), reason: reason.into() };
        let region = match (r.kind, &r.geohash, &r.polygon) {
            (RegionKind::Geohash, Some(g), None) => Region::geohash(&r.id, g)?,
            (RegionKind::Polygon, None, Some(ring)) => {
                let pts = ring.iter().map(|[lat, lon]| GeoPoint::new(*lat, *lon)).collect::<Result<Vec<_>, _>>()?;
                Region::polygon(&r.id, pts)?
            }
            _ => return Err(bad("exactly one of geohash/polygon must match kind")),
        };
        Ok(Region { name: r.name, ..region })
    }
}

impl From<Region> for RegionRecord {
    fn from(r: Region) -> Self {
        match r.shape {
            RegionShape::Geohash(g) => RegionRecord { id: r.id, kind: RegionKind::Geohash, geohash: Some(g), polygon: None, name: r.name },
            RegionShape::Polygon(ring) => RegionRecord {
                id: r.id,
                kind: RegionKind::Polygon,
                geohash: None,
                polygon: Some(ring.iter().map(|p| [p.lat, p.lon]).collect()),
                name: r.name,
            },
        }
    }
}

impl Region {
    pub fn geohash(id: &str, g: &str) -> Result<Self, GeoError> {
        let bbox = geohash::decode_bbox(g)?;
        Ok(Self { id: id.to_string(), shape: RegionShape::Geohash(g.to_string()), name: None, bbox })
    }

    pub fn polygon(id: &str, ring: Vec<GeoPoint>) -> Result<Self, GeoError> {
        let bad = |reason: &str| GeoError::InvalidRegion { id: id.to_string(), reason: reason.into() };
        if ring.len() < 4 {
            return Err(bad("polygon ring needs at least 4 points"));
        }
        if ring.first() != ring.last() {
            return Err(bad("polygon ring must be closed"));
        }
        if self_intersects(&ring) {
            return Err(bad("polygon ring self-intersects"));
        }
        let bbox = BBox::of_points(&ring);
        Ok(Self { id: id.to_string(), shape: RegionShape::Polygon(ring), name: None, bbox })
    }

    pub fn kind(&self) -> RegionKind {
        match self.shape {
            RegionShape::Geohash(_) => RegionKind::Geohash,
            RegionShape::Polygon(_) => RegionKind::Polygon,
        }
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_region(p, self)
    }
}

/// Geohash regions use half-open bbox containment; polygons use even-odd ray
/// casting with boundary points counted as inside.
pub fn point_in_region(p: GeoPoint, r: &Region) -> bool {
    match &r.shape {
        RegionShape::Geohash(_) => r.bbox.contains(p),
        RegionShape::Polygon(ring) => r.bbox.contains_closed(p) && in_polygon(p, ring),
    }
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1e-300);
    if cross.abs() > 1e-12 * scale {
        return false;
    }
    p.lon >= a.lon.min(b.lon) && p.lon <= a.lon.max(b.lon) && p.lat >= a.lat.min(b.lat) && p.lat <= a.lat.max(b.lat)
}

fn in_polygon(p: GeoPoint, ring: &[GeoPoint]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b) {
            return true;
        }
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: GeoPoint, b: GeoPoint, c: GeoPoint) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

fn segments_touch(a: GeoPoint, b: GeoPoint, c: GeoPoint, d: GeoPoint) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d)
}

fn self_intersects(ring: &[GeoPoint]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            if segments_touch(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// Regular grid over the region bbox in local meters, anchored at the
/// south-west corner, filtered to points inside the region. Rows run south to
/// north, points within a row west to east.
pub fn grid_points(r: &Region, spacing_m: f64) -> Result<Vec<GeoPoint>, GeoError> {
    if !(spacing_m > 0.0) || !spacing_m.is_finite() {
        return Err(GeoError::InvalidArgument(format!("grid spacing must be positive, got {spacing_m}")));
    }
    let b = r.bbox;
    let lat_center = (b.lat_min + b.lat_max) / 2.0;
    let dlat = spacing_m / METERS_PER_DEG_LAT;
    let dlon = spacing_m / meters_per_deg_lon(lat_center);
    // Tolerance absorbs rounding when the extent is an exact multiple of the spacing.
    let rows = ((b.lat_max - b.lat_min) / dlat + 1e-9).floor() as usize;
    let cols = ((b.lon_max - b.lon_min) / dlon + 1e-9).floor() as usize;
    let mut out = Vec::new();
    for i in 0..=rows {
        let lat = (b.lat_min + i as f64 * dlat).min(b.lat_max);
        for j in 0..=cols {
            let lon = (b.lon_min + j as f64 * dlon).min(b.lon_max);
            let p = GeoPoint { lat, lon };
            if point_in_region(p, r) {
                out.push(p);
            }
        }
    }
    Ok(out)
}
