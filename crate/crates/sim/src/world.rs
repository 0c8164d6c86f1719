//! Regions, POIs and the region covariate table.

use std::collections::BTreeMap;

use geobehave_core::geo::{geohash, meters_per_deg_lon, BBox, GeoPoint, Poi, PoiIndex, PoiType, Region, FAST_FOOD, METERS_PER_DEG_LAT};
use geobehave_core::lec::{compute_all_lecs, LecRegistry, StatTable};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::WorldConfig;
use crate::{stream_rng, SimError, WORLD_STREAM};

/// POIs keep this distance from their cell's edges, so that GPS noise around
/// a POI never flips region membership.
pub const POI_EDGE_MARGIN_M: f64 = 25.0;
/// Minimum spacing between POIs of one cell; keeps every POI the unambiguous
/// nearest match for a stay at it.
pub const POI_MIN_SPACING_M: f64 = 25.0;

pub const RESTAURANT_DENSITY: &str = "restaurant_density";
pub const SPORTS_FACILITIES: &str = "sports_facilities";
pub const MEDIAN_INCOME: &str = "median_income";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub lec: String,
    pub behavior: String,
    pub beta: f64,
    pub scale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTruth {
    pub region_id: String,
    pub income_z: f64,
    pub intensity_per_km2: BTreeMap<String, f64>,
    pub poi_counts: BTreeMap<String, usize>,
    pub lecs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub seed: u64,
    pub effects: Vec<PlantedEffect>,
    pub regions: Vec<RegionTruth>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub regions: Vec<Region>,
    /// Grid `(row, col)` of each region.
    pub cells: Vec<(usize, usize)>,
    pub pois: PoiIndex,
    pub stat_table: StatTable,
    pub truth: WorldTruth,
    /// Fast-food POI locations per region.
    pub fast_food: Vec<Vec<GeoPoint>>,
}

impl World {
    pub fn region_index(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.id == id)
    }

    pub fn lec(&self, region: usize, name: &str) -> f64 {
        self.truth.regions[region].lecs.get(name).copied().unwrap_or(0.0)
    }

    pub fn income_z(&self, region: usize) -> f64 {
        self.truth.regions[region].income_z
    }

    /// Regions within `max_cells` grid steps (Chebyshev) of `region`, itself excluded.
    pub fn nearby(&self, region: usize, max_cells: usize) -> Vec<usize> {
        let (r0, c0) = self.cells[region];
        (0..self.cells.len())
            .filter(|&i| i != region && self.cells[i].0.abs_diff(r0) <= max_cells && self.cells[i].1.abs_diff(c0) <= max_cells)
            .collect()
    }

    /// Uniform point at least `margin_m` inside a region's cell.
    pub fn inner_point(&self, region: usize, margin_m: f64, rng: &mut impl Rng) -> GeoPoint {
        let b = shrink(self.regions[region].bbox(), margin_m);
        GeoPoint { lat: rng.random_range(b.lat_min..b.lat_max), lon: rng.random_range(b.lon_min..b.lon_max) }
    }
}

fn shrink(b: BBox, margin_m: f64) -> BBox {
    let dlat = (margin_m / METERS_PER_DEG_LAT).min((b.lat_max - b.lat_min) * 0.25);
    let dlon = (margin_m / meters_per_deg_lon((b.lat_min + b.lat_max) / 2.0)).min((b.lon_max - b.lon_min) * 0.25);
    BBox { lat_min: b.lat_min + dlat, lat_max: b.lat_max - dlat, lon_min: b.lon_min + dlon, lon_max: b.lon_max - dlon }
}

fn area_km2(b: &BBox) -> f64 {
    let h = (b.lat_max - b.lat_min) * METERS_PER_DEG_LAT;
    let w = (b.lon_max - b.lon_min) * meters_per_deg_lon((b.lat_min + b.lat_max) / 2.0);
    h * w / 1e6
}

/// Planar distance in meters; adequate within a few kilometers.
pub fn local_dist_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let dy = (a.lat - b.lat) * METERS_PER_DEG_LAT;
    let dx = (a.lon - b.lon) * meters_per_deg_lon((a.lat + b.lat) / 2.0);
    (dx * dx + dy * dy).sqrt()
}

fn planted_effects(cfg: &WorldConfig) -> Vec<PlantedEffect> {
    let e = &cfg.effects;
    let per_unit_income = |b: f64| if cfg.income_sd > 0.0 { b / cfg.income_sd } else { 0.0 };
    let mk = |lec: &str, behavior: &str, beta: f64, scale: &str| PlantedEffect { lec: lec.into(), behavior: behavior.into(), beta, scale: scale.into() };
    vec![
        mk(RESTAURANT_DENSITY, "pct_fastfood_visits", e.fastfood_restaurant_density, "log-odds per visit"),
        mk(MEDIAN_INCOME, "pct_fastfood_visits", per_unit_income(e.fastfood_income_z), "log-odds per visit"),
        mk(SPORTS_FACILITIES, "steps_per_hour_mean", e.steps_sports_facilities, "steps per recorded hour"),
        mk(MEDIAN_INCOME, "steps_per_hour_mean", per_unit_income(e.steps_income_z), "steps per recorded hour"),
    ]
}

/// Builds the region block, places POIs and computes the region LECs.
pub fn generate_world(cfg: &WorldConfig) -> Result<World, SimError> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, WORLD_STREAM);
    let p = cfg.geohash_precision;
    let (dlat, dlon) = geohash::cell_size_deg(p);
    let origin = GeoPoint::new(cfg.origin[0], cfg.origin[1]).map_err(|e| SimError::World(e.to_string()))?;
    let base = geohash::decode_bbox(&geohash::encode(origin, p).map_err(|e| SimError::World(e.to_string()))?).map_err(|e| SimError::World(e.to_string()))?;
    let cols = (cfg.n_regions as f64).sqrt().ceil().max(1.0) as usize;

    let mut regions = Vec::with_capacity(cfg.n_regions);
    let mut cells = Vec::with_capacity(cfg.n_regions);
    for k in 0..cfg.n_regions {
        let (row, col) = (k / cols, k % cols);
        let center = GeoPoint::new(base.lat_min + (row as f64 + 0.5) * dlat, base.lon_min + (col as f64 + 0.5) * dlon).map_err(|e| SimError::World(format!("region block leaves the globe: {e}")))?;
        let code = geohash::encode(center, p).map_err(|e| SimError::World(e.to_string()))?;
        regions.push(Region::geohash(&code, &code).map_err(|e| SimError::World(e.to_string()))?);
        cells.push((row, col));
    }

    let mut pois = Vec::new();
    let mut fast_food = Vec::with_capacity(regions.len());
    let mut truths = Vec::with_capacity(regions.len());
    let mut table = StatTable { columns: vec![MEDIAN_INCOME.to_string()], rows: BTreeMap::new() };
    for region in &regions {
        let raw_z: f64 = rng.sample(StandardNormal);
        let income = (cfg.income_mean + cfg.income_sd * raw_z).round();
        let income_z = if cfg.income_sd > 0.0 { (income - cfg.income_mean) / cfg.income_sd } else { 0.0 };
        table.rows.insert(region.id.clone(), vec![Some(income)]);

        let inner = shrink(region.bbox(), POI_EDGE_MARGIN_M);
        let area = area_km2(&inner);
        let mut placed: Vec<GeoPoint> = Vec::new();
        let mut ff = Vec::new();
        let mut intensity = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (path, spec) in &cfg.poi {
            let u: f64 = rng.sample(StandardNormal);
            let lambda = spec.per_km2 * (spec.income_slope * income_z + spec.log_sd * u).exp();
            let mean = lambda * area;
            let drawn = if mean > 0.0 { Poisson::new(mean).map_err(|e| SimError::World(e.to_string()))?.sample(&mut rng) as usize } else { 0 };
            let n = drawn.max(spec.min_per_region as usize);
            for _ in 0..n {
                let mut at = GeoPoint { lat: 0.0, lon: 0.0 };
                for _ in 0..50 {
                    at = GeoPoint { lat: rng.random_range(inner.lat_min..inner.lat_max), lon: rng.random_range(inner.lon_min..inner.lon_max) };
                    if placed.iter().all(|q| local_dist_m(*q, at) >= POI_MIN_SPACING_M) {
                        break;
                    }
                }
                placed.push(at);
                if path == FAST_FOOD {
                    ff.push(at);
                }
                pois.push(Poi { id: format!("poi{:06}", pois.len() + 1), poi_type: PoiType::new(path.clone()), location: at, name: None });
            }
            intensity.insert(path.clone(), lambda);
            counts.insert(path.clone(), n);
        }
        fast_food.push(ff);
        truths.push(RegionTruth { region_id: region.id.clone(), income_z, intensity_per_km2: intensity, poi_counts: counts, lecs: BTreeMap::new() });
    }

    let pois = PoiIndex::new(pois);
    let (values, failures) = compute_all_lecs(&LecRegistry::default_registry(), &regions, &pois, Some(&table));
    if let Some(f) = failures.first() {
        return Err(SimError::World(format!("LEC `{}` failed for region {}: {}", f.spec, f.region_id, f.error)));
    }
    for v in values {
        let i = regions.iter().position(|r| r.id == v.region_id).expect("LEC of a known region");
        if let Some(x) = v.value {
            truths[i].lecs.insert(v.name, x);
        }
    }
    let truth = WorldTruth { seed: cfg.seed, effects: planted_effects(cfg), regions: truths };
    Ok(World { config: cfg.clone(), regions, cells, pois, stat_table: table, truth, fast_food })
}
