//! Acceptance suite. Each test runs one criterion at its stated tolerance and
//! runtime limit and prints a single `PASS` or `FAIL` line to stderr.
//! Criteria run one at a time so runtime limits are measured without
//! interference.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use geobehave_cli::pipeline::{self, simulate_in_memory};
use geobehave_core::aggregation::{region_visits, AggregationConfig, Aggregator, ParticipantData, Period, PopulationIndicator};
use geobehave_core::analysis::regression::{irls, wls, Family};
use geobehave_core::analysis::{CausalDag, DagEdge, DagFile, DagNode, NodeKind};
use geobehave_core::base_indicators::{extract_participant, ActivityType, BaseIndicators, EpochFeature, ExtractConfig, PoiVisit};
use geobehave_core::config::Config;
use geobehave_core::geo::{geohash, GeoPoint, Poi, PoiIndex, PoiType, Region, RegionShape, FAST_FOOD, METERS_PER_DEG_LAT};
use geobehave_core::ingest::{monitoring_coverage, prepare_session, AccSample, BmiCategory, GapConfig, LocSample, Participant, RecordingSession, Sex, Store};
use geobehave_core::lec::{avg_poi_density, compute_all_lecs, count_pois_in_region, LecRegistry, StatTable};
use geobehave_core::portal::{artifacts, render, run_associate, ApiRequest, AssociateQuery, Portal, Roles, Snapshot};
use geobehave_sim::{generate_population, generate_recordings, generate_world, par_map, SimConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

static SEQUENTIAL: Mutex<()> = Mutex::new(());

fn criterion(name: &str, limit: Duration, f: impl FnOnce() -> String) {
    let _one_at_a_time = SEQUENTIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).map_err(|p| {
        p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())
    });
    let secs = t.elapsed().as_secs_f64();
    let outcome = outcome.and_then(|d| if t.elapsed() <= limit { Ok(d) } else { Err(format!("{d}; over the {} s limit", limit.as_secs())) });
    let line = match &outcome {
        Ok(d) => format!("PASS {name}: {d} [{secs:.1} s]"),
        Err(e) => format!("FAIL {name}: {e} [{secs:.1} s]"),
    };
    // Straight to the stream so the line shows without --nocapture.
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(outcome.is_ok(), "{line}");
}

fn pt(lat: f64, lon: f64) -> GeoPoint {
    GeoPoint::new(lat, lon).unwrap()
}

fn kid(pid: &str, home: &str) -> Participant {
    Participant { pid: pid.into(), age_years: 12, sex: Sex::Female, bmi_category: BmiCategory::Normal, home_region_id: home.into(), has_smartwatch: false, utc_offset_min: 0 }
}

fn epoch(t_start: i64, steps: u32, activity_type: ActivityType) -> EpochFeature {
    EpochFeature { t_start, duration_s: 60, activity_counts: 0.0, steps, activity_type, samples: 600, coverage: 1.0 }
}

// Reference geohash: the full interleaved bit string first, then 5-bit chunks.

const BASE32: &[u8] = b"0123456789bcdefghjkmnpqrstuvwxyz";

fn ref_encode(lat: f64, lon: f64, precision: usize) -> String {
    let mut bits = Vec::with_capacity(5 * precision);
    let (mut lat_r, mut lon_r) = ((-90.0f64, 90.0f64), (-180.0f64, 180.0f64));
    for i in 0..5 * precision {
        let (r, v) = if i % 2 == 0 { (&mut lon_r, lon) } else { (&mut lat_r, lat) };
        let mid = (r.0 + r.1) / 2.0;
        if v >= mid {
            bits.push(1u8);
            r.0 = mid;
        } else {
            bits.push(0u8);
            r.1 = mid;
        }
    }
    bits.chunks(5).map(|c| BASE32[c.iter().fold(0usize, |a, &b| a * 2 + b as usize)] as char).collect()
}

/// `(lat_min, lat_max, lon_min, lon_max)` from the cell's integer indices.
fn ref_bbox(code: &str) -> (f64, f64, f64, f64) {
    let bits: Vec<u64> = code.bytes().flat_map(|c| {
        let v = BASE32.iter().position(|&b| b == c).unwrap() as u64;
        (0..5).rev().map(move |s| (v >> s) & 1)
    }).collect();
    let (mut lon_i, mut lon_n, mut lat_i, mut lat_n) = (0u64, 0u32, 0u64, 0u32);
    for (k, b) in bits.iter().enumerate() {
        if k % 2 == 0 {
            lon_i = lon_i * 2 + b;
            lon_n += 1;
        } else {
            lat_i = lat_i * 2 + b;
            lat_n += 1;
        }
    }
    let dlat = 180.0 / (1u64 << lat_n) as f64;
    let dlon = 360.0 / (1u64 << lon_n) as f64;
    (-90.0 + lat_i as f64 * dlat, -90.0 + (lat_i + 1) as f64 * dlat, -180.0 + lon_i as f64 * dlon, -180.0 + (lon_i + 1) as f64 * dlon)
}

#[test]
fn geohash_codec() {
    criterion("geohash codec", Duration::from_secs(5), || {
        for (lat, lon, k, want) in [(0.0, 0.0, 1, "s"), (57.64911, 10.40744, 11, "u4pruydqqvj")] {
            let g = geohash::encode(pt(lat, lon), k).unwrap();
            assert_eq!(g, want);
            assert_eq!(g, ref_encode(lat, lon, k));
            let b = geohash::decode_bbox(&g).unwrap();
            assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), ref_bbox(&g), "{g}");
            assert!(Region::geohash("r", &g).unwrap().contains(pt(lat, lon)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let (lat, lon) = (rng.random_range(-89.999..89.999), rng.random_range(-179.999..179.999));
            let k = rng.random_range(1..=geohash::MAX_PRECISION);
            let g = geohash::encode(pt(lat, lon), k).unwrap();
            let b = geohash::decode_bbox(&g).unwrap();
            assert!(b.lat_min <= lat && lat < b.lat_max && b.lon_min <= lon && lon < b.lon_max, "{lat},{lon} outside {g}");
            assert_eq!(g, ref_encode(lat, lon, k));
            assert_eq!((b.lat_min, b.lat_max, b.lon_min, b.lon_max), ref_bbox(&g));
        }
        "10000 round trips contained, both fixed vectors match".into()
    });
}

// Brute-force indicator references over raw fixtures.

const REF_PRECISION: usize = 6;

struct SmallWorld {
    regions: Vec<Region>,
    pois: Vec<Poi>,
    people: Vec<(Participant, Vec<LocSample>, Vec<EpochFeature>, Vec<PoiVisit>)>,
}

const TYPES: [&str; 5] = [FAST_FOOD, "food/restaurant", "food/cafe", "recreation/sports_facility", "recreation/park"];

fn small_world(seed: u64) -> SmallWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (rng.random_range(1..=4usize), rng.random_range(1..=5usize));
    let origin = geohash::decode_bbox(&geohash::encode(pt(40.61, 22.91), REF_PRECISION).unwrap()).unwrap();
    let (dlat, dlon) = (origin.lat_max - origin.lat_min, origin.lon_max - origin.lon_min);
    let mut regions = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let c = pt(origin.lat_min + (i as f64 + 0.5) * dlat, origin.lon_min + (j as f64 + 0.5) * dlon);
            regions.push(Region::geohash(&format!("r{i}{j}"), &geohash::encode(c, REF_PRECISION).unwrap()).unwrap());
        }
    }
    // Points may fall one cell beyond the block, outside every region.
    let any_point = |rng: &mut ChaCha8Rng| {
        pt(origin.lat_min + rng.random_range(-0.3..rows as f64 + 0.3) * dlat, origin.lon_min + rng.random_range(-0.3..cols as f64 + 0.3) * dlon)
    };
    let pois: Vec<Poi> = (0..rng.random_range(0..60))
        .map(|k| Poi { id: format!("poi{k}"), poi_type: PoiType::new(TYPES[rng.random_range(0..TYPES.len())]), location: any_point(&mut rng), name: None })
        .collect();
    let mut people = Vec::new();
    for k in 0..rng.random_range(1..=50) {
        let home = &regions[rng.random_range(0..regions.len())];
        let pid = format!("p{k:02}");
        // One fix a minute, dwelling 2 to 40 minutes per place.
        let mut loc = Vec::new();
        let mut t = 0i64;
        let end = rng.random_range(10..40) * 3_600_000;
        while t < end {
            let p = any_point(&mut rng);
            for _ in 0..rng.random_range(2..40) {
                loc.push(LocSample { t, point: p, accuracy_m: None });
                t += 60_000;
            }
        }
        let hours = [18.0, 20.0, 20.5, 26.0, 40.0][rng.random_range(0..5)];
        let mut epochs = Vec::new();
        for m in 0..(hours * 60.0) as i64 {
            let class = [ActivityType::Sedentary, ActivityType::Light, ActivityType::Moderate, ActivityType::Unknown][rng.random_range(0..4)];
            let steps = if class == ActivityType::Unknown { 0 } else { rng.random_range(6..=9) };
            epochs.push(epoch(m * 60_000 + rng.random_range(0..2) * 3_600_000 * (m / 600), steps, class));
        }
        epochs.sort_by_key(|e| e.t_start);
        epochs.dedup_by_key(|e| e.t_start);
        let visits = (0..rng.random_range(0..8))
            .map(|_| {
                let a = rng.random_range(0..end);
                let poi = if pois.is_empty() || rng.random_bool(0.3) { None } else { Some(&pois[rng.random_range(0..pois.len())]) };
                PoiVisit {
                    pid: pid.clone(),
                    poi_id: poi.map_or("x".into(), |p| p.id.clone()),
                    poi_type: poi.map_or(PoiType::new(FAST_FOOD), |p| p.poi_type.clone()),
                    t_enter: a,
                    t_exit: a + rng.random_range(60_000..3_000_000),
                    stay_center: pt(40.61, 22.91),
                }
            })
            .collect();
        people.push((kid(&pid, &home.id), loc, epochs, visits));
    }
    SmallWorld { regions, pois, people }
}

fn ref_is_under(t: &str, filter: &str) -> bool {
    t == filter || t.strip_prefix(filter).is_some_and(|rest| rest.starts_with('/'))
}

fn ref_region_of<'a>(p: GeoPoint, regions: &'a [Region]) -> Option<&'a str> {
    let code = ref_encode(p.lat, p.lon, REF_PRECISION);
    regions.iter().find(|r| matches!(&r.shape, RegionShape::Geohash(g) if *g == code)).map(|r| r.id.as_str())
}

/// Raw visits as `(region, enter, exit)`: entered at the first fix inside,
/// left at the first fix elsewhere or at the last fix.
fn ref_visits(loc: &[LocSample], regions: &[Region]) -> Vec<(String, i64, i64)> {
    let mut out = Vec::new();
    let mut open: Option<(String, i64)> = None;
    for f in loc {
        let here = ref_region_of(f.point, regions);
        if open.as_ref().is_some_and(|(r, _)| Some(r.as_str()) != here) {
            let (r, a) = open.take().unwrap();
            out.push((r, a, f.t));
        }
        if open.is_none() {
            open = here.map(|r| (r.to_string(), f.t));
        }
    }
    if let (Some((r, a)), Some(last)) = (open, loc.last()) {
        if last.t > a {
            out.push((r, a, last.t));
        }
    }
    out
}

fn ref_fast_food(w: &SmallWorld, region: &str, period: Period) -> (Option<f64>, usize) {
    let (mut visits, mut hits) = (0usize, 0usize);
    let mut who = BTreeSet::new();
    for (p, loc, _, pv) in &w.people {
        for (r, a, b) in ref_visits(loc, &w.regions) {
            let (a, b) = (a.max(period.from), b.min(period.to));
            if r != region || b - a < 600_000 {
                continue;
            }
            visits += 1;
            who.insert(p.pid.clone());
            if pv.iter().any(|v| ref_is_under(v.poi_type.as_str(), FAST_FOOD) && v.t_enter < b && v.t_exit > a) {
                hits += 1;
            }
        }
    }
    ((visits > 0).then(|| 100.0 * hits as f64 / visits as f64), who.len())
}

fn ref_sedentary(w: &SmallWorld, region: &str, period: Period) -> (Option<f64>, usize) {
    let (mut eligible, mut sedentary) = (0usize, 0usize);
    for (_, _, epochs, _) in w.people.iter().filter(|(p, ..)| p.home_region_id == region) {
        let (mut secs, mut steps) = (0.0, 0.0);
        for e in epochs.iter().filter(|e| e.activity_type != ActivityType::Unknown && e.t_start >= period.from && e.t_start < period.to) {
            secs += e.duration_s as f64;
            steps += e.steps as f64;
        }
        if secs / 3600.0 > 20.0 {
            eligible += 1;
            if steps / (secs / 3600.0) < 450.0 {
                sedentary += 1;
            }
        }
    }
    ((eligible > 0).then(|| 100.0 * sedentary as f64 / eligible as f64), eligible)
}

fn ref_haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let r = 6_371_000.0f64;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let s1 = ((p2 - p1) / 2.0).sin();
    let s2 = ((b.lon - a.lon).to_radians() / 2.0).sin();
    2.0 * r * (s1 * s1 + p1.cos() * p2.cos() * s2 * s2).sqrt().asin()
}

fn ref_density(region: &Region, pois: &[Poi], filter: &str, spacing: f64, radius: f64) -> f64 {
    let b = region.bbox();
    let dlat = spacing / METERS_PER_DEG_LAT;
    let dlon = spacing / (METERS_PER_DEG_LAT * ((b.lat_min + b.lat_max) / 2.0).to_radians().cos());
    let (mut points, mut total) = (0usize, 0usize);
    let mut i = 0;
    while b.lat_min + i as f64 * dlat < b.lat_max {
        let lat = b.lat_min + i as f64 * dlat;
        let mut j = 0;
        while b.lon_min + j as f64 * dlon < b.lon_max {
            let g = pt(lat, b.lon_min + j as f64 * dlon);
            points += 1;
            total += pois.iter().filter(|p| ref_is_under(p.poi_type.as_str(), filter) && ref_haversine(g, p.location) <= radius).count();
            j += 1;
        }
        i += 1;
    }
    total as f64 / points as f64
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs()),
        _ => false,
    }
}

#[test]
fn indicator_oracle_equivalence() {
    criterion("indicator oracle equivalence", Duration::from_secs(120), || {
        let agg = AggregationConfig { k_min: 1, ..Default::default() };
        let mut compared = 0usize;
        for seed in 0..50 {
            let w = small_world(seed);
            let data: Vec<ParticipantData> = w
                .people
                .iter()
                .map(|(p, loc, epochs, pv)| ParticipantData {
                    participant: p.clone(),
                    base: BaseIndicators { pid: p.pid.clone(), epochs: epochs.clone(), visits: pv.clone(), ..Default::default() },
                    visits: region_visits(&p.pid, loc, &[], &w.regions, 180_000, agg.min_visit_ms()),
                })
                .collect();
            let a = Aggregator::new(&data, agg.clone());
            let idx = PoiIndex::new(w.pois.clone());
            for period in [Period::all(), Period { from: 6 * 3_600_000, to: 30 * 3_600_000 }] {
                for r in &w.regions {
                    let ff = a.pct_fastfood_visits(r, period);
                    let (v, n) = ref_fast_food(&w, &r.id, period);
                    assert!(ff.n == n && same(ff.value, v), "world {seed} {}: fast food {:?}/{} vs {v:?}/{n}", r.id, ff.value, ff.n);
                    let sed = a.pct_sedentary_residents(r, period);
                    let (v, n) = ref_sedentary(&w, &r.id, period);
                    assert!(sed.n == n && same(sed.value, v), "world {seed} {}: sedentary {:?}/{} vs {v:?}/{n}", r.id, sed.value, sed.n);
                    compared += 2;
                }
            }
            for r in &w.regions {
                for filter in ["food", FAST_FOOD, "recreation"] {
                    let c = count_pois_in_region(r, &idx, &PoiType::new(filter)).value.unwrap();
                    let want = w.pois.iter().filter(|p| ref_is_under(p.poi_type.as_str(), filter) && ref_region_of(p.location, &w.regions) == Some(r.id.as_str())).count();
                    assert_eq!(c, want as f64, "world {seed} {} {filter}", r.id);
                    let d = avg_poi_density(r, &idx, &PoiType::new(filter), 30.0, 100.0).unwrap().value;
                    let want = ref_density(r, &w.pois, filter, 30.0, 100.0);
                    assert!(same(d, Some(want)), "world {seed} {} {filter}: density {d:?} vs {want}", r.id);
                    compared += 2;
                }
            }
        }
        format!("50 worlds, {compared} indicator values equal")
    });
}

#[test]
fn indicator_boundaries() {
    criterion("indicator boundary rules", Duration::from_secs(60), || {
        let region = Region::geohash("r", "sx0qc").unwrap();
        let cfg = AggregationConfig { k_min: 1, ..Default::default() };
        let resident = |pid: &str, minutes: i64, steps_first: u32| {
            let mut epochs: Vec<EpochFeature> = (0..minutes).map(|m| epoch(m * 60_000, 0, ActivityType::Light)).collect();
            epochs[0].steps = steps_first;
            ParticipantData { participant: kid(pid, "r"), base: BaseIndicators { pid: pid.into(), epochs, ..Default::default() }, visits: vec![] }
        };
        // 21 h at exactly 450 steps per hour.
        let exact = [resident("a", 21 * 60, 450 * 21)];
        let s = Aggregator::new(&exact, cfg.clone()).pct_sedentary_residents(&region, Period::all());
        assert_eq!((s.value, s.n), (Some(0.0), 1), "450 steps/h must not be sedentary");
        let below = [resident("a", 21 * 60, 450 * 21 - 1)];
        assert_eq!(Aggregator::new(&below, cfg.clone()).pct_sedentary_residents(&region, Period::all()).value, Some(100.0));

        let twenty = [resident("a", 20 * 60, 0)];
        let s = Aggregator::new(&twenty, cfg.clone()).pct_sedentary_residents(&region, Period::all());
        assert_eq!((s.value, s.n), (None, 0), "20.0 h must be excluded");
        let more = [resident("a", 20 * 60 + 1, 0)];
        assert_eq!(Aggregator::new(&more, cfg.clone()).pct_sedentary_residents(&region, Period::all()).n, 1);

        // A visit of exactly 10 minutes from raw fixes, one fast-food stop inside it.
        let b = region.bbox();
        let inside = pt((b.lat_min + b.lat_max) / 2.0, (b.lon_min + b.lon_max) / 2.0);
        let outside = pt(b.lat_max + 0.01, b.lon_max + 0.01);
        let visit = |minutes: i64| {
            let mut loc: Vec<LocSample> = (0..minutes).map(|m| LocSample { t: m * 60_000, point: inside, accuracy_m: None }).collect();
            loc.push(LocSample { t: minutes * 60_000, point: outside, accuracy_m: None });
            let pv = PoiVisit { pid: "v".into(), poi_id: "ff".into(), poi_type: PoiType::new(FAST_FOOD), t_enter: 60_000, t_exit: 120_000, stay_center: inside };
            let visits = region_visits("v", &loc, &[], std::slice::from_ref(&region), 180_000, cfg.min_visit_ms());
            [ParticipantData { participant: kid("v", "elsewhere"), base: BaseIndicators { pid: "v".into(), visits: vec![pv], ..Default::default() }, visits }]
        };
        let ten = visit(10);
        let f = Aggregator::new(&ten, cfg.clone()).pct_fastfood_visits(&region, Period::all());
        assert_eq!((f.value, f.n), (Some(100.0), 1), "a 10-minute visit must be included");
        let nine = visit(9);
        assert_eq!(Aggregator::new(&nine, cfg.clone()).pct_fastfood_visits(&region, Period::all()).n, 0);
        "450 steps/h not sedentary, 20.0 h excluded, 10-minute visit included".into()
    });
}

#[test]
fn doze_semantics() {
    criterion("doze semantics", Duration::from_secs(60), || {
        let home = pt(40.6012345, 22.9123456);
        let (gap_a, gap_b) = (20 * 60_000i64, 50 * 60_000i64);
        let mut s = RecordingSession::new("d", "phone");
        // 10 Hz walking at 2 steps per second except during the gap.
        s.acc = (0..70 * 600)
            .map(|k| k as i64 * 100)
            .filter(|t| *t < gap_a || *t >= gap_b)
            .map(|t| AccSample { t, x: 0.0, y: 0.0, z: 9.81 + 3.0 * (t as f64 / 1000.0 * 4.0 * std::f64::consts::PI).sin() })
            .collect();
        s.loc = (0..=70).map(|m| m * 60_000).filter(|t| *t <= gap_a || *t >= gap_b).map(|t| LocSample { t, point: home, accuracy_m: Some(5.0) }).collect();
        let s = prepare_session(s, &GapConfig::default());
        assert_eq!(s.gaps.len(), 1, "{:?}", s.gaps);
        assert!(s.gaps[0].t_start < gap_a && s.gaps[0].t_end >= gap_b, "{:?}", s.gaps);
        assert_eq!(s.gaps[0].frozen_location, Some(home));
        let base = extract_participant(&kid("d", "r"), &[s], &PoiIndex::default(), &ExtractConfig::default(), &GapConfig::default());
        let inside: Vec<&EpochFeature> = base.epochs.iter().filter(|e| e.t_start >= gap_a && e.t_end() <= gap_b).collect();
        assert_eq!(inside.len(), 30);
        for e in &inside {
            assert_eq!((e.steps, e.activity_counts, e.activity_type), (0, 0.0, ActivityType::Sedentary), "epoch at {}", e.t_start);
        }
        assert!(base.epochs.iter().filter(|e| e.t_end() <= gap_a).skip(1).all(|e| e.steps > 0));
        assert_eq!(base.stays.len(), 1, "{:?}", base.stays);
        assert_eq!((base.stays[0].t_enter, base.stays[0].t_exit), (0, 70 * 60_000));
        "30 gap epochs with 0 steps and 0 counts, frozen location, one stay across the gap".into()
    });
}

/// Raw values planted in the privacy store; none may ever appear in a response.
struct Sentinels(Vec<String>);

fn privacy_store(dir: &Path) -> (Store, Vec<Region>, BTreeMap<String, usize>, Vec<String>) {
    let store = Store::open(dir).unwrap();
    let origin = geohash::decode_bbox(&geohash::encode(pt(40.61, 22.91), 6).unwrap()).unwrap();
    let (dlat, dlon) = (origin.lat_max - origin.lat_min, origin.lon_max - origin.lon_min);
    let mut regions = Vec::new();
    let mut planted = BTreeMap::new();
    let mut people = Vec::new();
    let t0 = 1_710_000_000_000i64;
    for n in 1..=15usize {
        let (i, j) = ((n - 1) / 5, (n - 1) % 5);
        let c = pt(origin.lat_min + (i as f64 + 0.5) * dlat, origin.lon_min + (j as f64 + 0.5) * dlon);
        let r = Region::geohash(&format!("n{n:02}"), &geohash::encode(c, 6).unwrap()).unwrap();
        planted.insert(r.id.clone(), n);
        for k in 0..n {
            people.push((kid(&format!("n{n:02}k{k:02}"), &r.id), c));
        }
        regions.push(r);
    }
    let participants: Vec<Participant> = people.iter().map(|(p, _)| p.clone()).collect();
    store.put_participants(&participants).unwrap();
    for (q, (p, c)) in people.iter().enumerate() {
        let mut s = RecordingSession::new(&p.pid, "sentinelphone");
        // 40 minutes at home with odd offsets and millisecond stamps.
        s.loc = (0..40)
            .map(|m| LocSample { t: t0 + m * 60_000 + 777, point: pt(c.lat + 1.234567e-5 + q as f64 * 1e-9, c.lon + 2.345678e-5), accuracy_m: Some(4.321) })
            .collect();
        s.acc = (0..50).map(|k| AccSample { t: t0 + k * 100 + 3, x: 0.1234567, y: -0.7654321, z: 9.8765432 }).collect();
        store.put(&prepare_session(s, &GapConfig::default())).unwrap();
        let epochs = (0..21 * 60).map(|m| epoch(t0 + m * 60_000, 8 + (q % 3) as u32, ActivityType::Light)).collect();
        let visits = vec![PoiVisit { pid: p.pid.clone(), poi_id: "ff".into(), poi_type: PoiType::new(FAST_FOOD), t_enter: t0 + 5 * 60_000, t_exit: t0 + 20 * 60_000, stay_center: *c }];
        store.put_base(&BaseIndicators { pid: p.pid.clone(), epochs, visits, ..Default::default() }).unwrap();
    }
    let mut sentinels = vec!["sentinelphone".to_string(), "4.321".into(), "0.1234567".into(), "-0.7654321".into(), "9.8765432".into(), (t0 + 777).to_string(), (t0 + 3).to_string()];
    for (q, (_, c)) in people.iter().enumerate() {
        sentinels.push(serde_json::to_string(&(c.lat + 1.234567e-5 + q as f64 * 1e-9)).unwrap());
        sentinels.push(serde_json::to_string(&(c.lon + 2.345678e-5)).unwrap());
    }
    (store, regions, planted, sentinels)
}

/// Every released population value must come from at least `k` contributors.
fn check_gate(v: &Value, planted: &BTreeMap<String, usize>, k: usize, analysis: bool, released: &mut usize) {
    match v {
        Value::Object(m) => {
            if let Some(Value::String(r)) = m.get("region_id") {
                let value = m.get("value").filter(|x| !x.is_null());
                if analysis || (m.contains_key("semantics") && value.is_some()) {
                    assert!(planted.get(r).is_some_and(|&n| n >= k), "region {r} with {:?} contributors released in {v}", planted.get(r));
                    if let Some(n) = m.get("n").and_then(Value::as_u64) {
                        assert!(n as usize >= k, "n {n} released in {v}");
                    }
                    *released += 1;
                }
            }
            for x in m.values() {
                check_gate(x, planted, k, analysis, released);
            }
        }
        Value::Array(a) => a.iter().for_each(|x| check_gate(x, planted, k, analysis, released)),
        _ => {}
    }
}

#[test]
fn privacy_gate_sweep() {
    criterion("privacy gate", Duration::from_secs(300), || {
        let dir = tempfile::tempdir().unwrap();
        let (store, regions, planted, sentinels) = privacy_store(dir.path());
        let sentinels = Sentinels(sentinels);
        let k = 10;
        let mut cfg = Config::default();
        cfg.aggregation.k_min = k;
        let pois = PoiIndex::new(
            regions.iter().enumerate().map(|(i, r)| Poi { id: format!("f{i}"), poi_type: PoiType::new(FAST_FOOD), location: r.bbox().center(), name: None }).collect(),
        );
        let table = StatTable {
            columns: vec!["median_income".into()],
            rows: regions.iter().enumerate().map(|(i, r)| (r.id.clone(), vec![Some(20_000.0 + 1_500.0 * i as f64)])).collect(),
        };
        let (lecs, failures) = compute_all_lecs(&LecRegistry::default_registry(), &regions, &pois, Some(&table));
        assert!(failures.is_empty(), "{failures:?}");
        pipeline::publish_environment(&store, &lecs, Some(&table), None).unwrap();

        let mut released = 0;
        // Aggregation outputs: returned, published and re-read.
        let out = pipeline::aggregate(&store, &regions, Period::all(), &cfg).unwrap();
        check_gate(&serde_json::to_value(&out).unwrap(), &planted, k, false, &mut released);
        let published = String::from_utf8(store.published(artifacts::POPULATION).unwrap().unwrap()).unwrap();
        for line in published.lines() {
            let ind: PopulationIndicator = serde_json::from_str(line).unwrap();
            check_gate(&serde_json::to_value(&ind).unwrap(), &planted, k, false, &mut released);
        }
        let snap = Snapshot::load(&store, Some(k)).unwrap();
        let data = snap.data.clone();
        let all = Aggregator::new(&data, snap.aggregation.clone()).all(&regions, Period::all());
        check_gate(&serde_json::to_value(&all).unwrap(), &planted, k, false, &mut released);
        let unsuppressed_regions: BTreeSet<&str> = all.iter().filter(|i| !i.suppressed).map(|i| i.region_id.as_str()).collect();
        assert_eq!(unsuppressed_regions.len(), 6, "regions with 10..=15 contributors release values");

        // Every API route under every role.
        let roles = Roles::from_toml("[tokens.doc]\nkind = \"clinician\"\npatients = [\"n01k00\", \"n12k03\"]\n[tokens.ph]\nkind = \"public_health\"\n[tokens.co]\nkind = \"community\"\n").unwrap();
        let portal = Portal::new(snap, roles);
        let mut requests: Vec<(ApiRequest, bool)> = vec![(ApiRequest::get("/config"), false), (ApiRequest::get("/regions"), false)];
        let names = ["steps_per_hour_mean", "median_steps_per_hour", "pct_time_sedentary", "mean_sleep_h", "pct_fastfood_visits", "pct_sedentary_residents"];
        for r in &regions {
            let base = format!("/regions/{}/indicators", r.id);
            requests.push((ApiRequest::get(&base), false));
            requests.push((ApiRequest::get(&format!("/regions/{}/lecs", r.id)), false));
            for sem in ["habits", "resources"] {
                requests.push((ApiRequest::get(&base).with_query("semantics", sem), false));
                requests.push((ApiRequest::get(&base).with_query("semantics", sem).with_query("period", "2024-03-09.."), false));
                for n in names {
                    requests.push((ApiRequest::get(&base).with_query("semantics", sem).with_query("name", n), false));
                }
            }
        }
        for n in names {
            for exposure in ["restaurant_density", "sports_facilities"] {
                let q = json!({"exposure": exposure, "outcome": n});
                requests.push((ApiRequest::post("/analysis/associate", q.clone()), true));
                for r in &regions {
                    requests.push((ApiRequest::post("/analysis/predict", json!({"query": q, "region": r.id, "delta": {exposure: 1.0}})), true));
                }
            }
        }
        for p in &data {
            requests.push((ApiRequest::get(&format!("/participants/{}/indicators", p.participant.pid)), false));
        }
        let mut statuses: BTreeMap<u16, usize> = BTreeMap::new();
        let mut gated = 0;
        for (req, analysis) in &requests {
            for token in [None, Some("ph"), Some("co"), Some("doc"), Some("bogus")] {
                let req = match token {
                    Some(t) => req.clone().with_token(t),
                    None => req.clone(),
                };
                let resp = portal.handle(&req);
                *statuses.entry(resp.status).or_default() += 1;
                let text = render(&resp.body);
                for s in &sentinels.0 {
                    assert!(!text.contains(s.as_str()), "raw value {s} leaked by {} {:?}", req.path, req.query);
                }
                if req.path.starts_with("/participants/") {
                    let pid = req.path.split('/').nth(2).unwrap();
                    let allowed = token == Some("doc") && ["n01k00", "n12k03"].contains(&pid);
                    assert_eq!(resp.status == 200, allowed, "{} with {token:?}", req.path);
                    if !allowed {
                        assert_eq!(resp.status, 403, "{} with {token:?}", req.path);
                    }
                    continue;
                }
                if resp.status == 200 {
                    check_gate(&resp.body, &planted, k, *analysis, &mut released);
                }
                gated += 1;
            }
        }
        assert!(released > 0);
        format!("{} requests ({gated} on aggregate routes), statuses {statuses:?}, {released} released values all from n >= {k}, no raw values", requests.len() * 5)
    });
}

#[test]
fn simulator_calibration() {
    criterion("simulator calibration", Duration::from_secs(600), || {
        let cfg = SimConfig::default();
        let gaps = GapConfig::default();
        let world = generate_world(&cfg.world).unwrap();
        let pop = generate_population(&world, &cfg.population, cfg.world.seed).unwrap();
        assert_eq!(pop.participants.len(), 1000);
        let idx: Vec<usize> = (0..pop.participants.len()).collect();
        // Coverage of each participant that sent any sensor data; judged from the streams.
        let cov: Vec<Option<f64>> = par_map(&idx, geobehave_sim::default_threads(), |&i| {
            let rec = generate_recordings(&world, &pop.participants[i], &pop.profiles[i], &cfg.recording, cfg.world.seed).unwrap();
            if rec.sessions.iter().all(|s| s.acc.is_empty() && s.loc.is_empty()) {
                return None;
            }
            let window = cfg.recording.window();
            let sessions: Vec<RecordingSession> = rec.sessions.into_iter().map(|s| prepare_session(s, &gaps)).collect();
            Some(monitoring_coverage(&sessions, window, &gaps).unwrap())
        });
        let sensorless = cov.iter().filter(|c| c.is_none()).count() as f64 / cov.len() as f64;
        let with: Vec<f64> = cov.into_iter().flatten().collect();
        let coverage = with.iter().sum::<f64>() / with.len() as f64;
        let detail = format!("coverage {coverage:.4} (0.68 ± 0.02), sensorless {sensorless:.3} (0.25 ± 0.03)");
        assert!((coverage - 0.68).abs() <= 0.02 && (sensorless - 0.25).abs() <= 0.03, "{detail}");
        detail
    });
}

struct Recovery {
    sign: usize,
    cover: usize,
    runs: usize,
}

fn recovery(null: bool) -> Recovery {
    let mut r = Recovery { sign: 0, cover: 0, runs: 0 };
    for seed in 1..=100u64 {
        let mut sim = SimConfig::default();
        sim.world.seed = seed;
        if null {
            sim.world.effects.fastfood_restaurant_density = 0.0;
        }
        sim.population.n_participants = 500;
        sim.recording.days = 7;
        sim.recording.accelerometer = false;
        let beta = sim.world.effects.fastfood_restaurant_density;
        let study = simulate_in_memory(&sim, &Config::default(), geobehave_sim::default_threads()).unwrap();
        let q = AssociateQuery { exposure: "restaurant_density".into(), outcome: "pct_fastfood_visits".into(), semantics: None, period: None, covariates: vec![] };
        r.runs += 1;
        // A failed fit counts against every rate.
        if let Ok(fit) = run_associate(&study.snapshot, &q) {
            let c = fit.coefficient("restaurant_density").unwrap();
            r.sign += (c.estimate > 0.0) as usize;
            r.cover += (c.ci_low <= beta && beta <= c.ci_high) as usize;
        }
    }
    r
}

#[test]
fn causal_recovery() {
    criterion("end-to-end causal recovery", Duration::from_secs(1800), || {
        let planted = recovery(false);
        let null = recovery(true);
        let detail = format!(
            "sign {}/{} (>= 95%), beta covered {}/{} (>= 93%), null CI contains 0 {}/{} (>= 93%)",
            planted.sign, planted.runs, planted.cover, planted.runs, null.cover, null.runs
        );
        let rate = |k: usize, n: usize| k as f64 / n as f64;
        assert!(rate(planted.sign, planted.runs) >= 0.95 && rate(planted.cover, planted.runs) >= 0.93 && rate(null.cover, null.runs) >= 0.93, "{detail}");
        detail
    });
}

fn dag(nodes: &[(&str, bool)], edges: &[(&str, &str)]) -> CausalDag {
    CausalDag::new(DagFile {
        description: None,
        nodes: nodes.iter().map(|&(n, observed)| DagNode { name: n.into(), kind: NodeKind::Demographic, observed }).collect(),
        edges: edges.iter().map(|&(a, b)| DagEdge { from: a.into(), to: b.into() }).collect(),
    })
    .unwrap()
}

#[test]
fn regression_engine() {
    criterion("regression engine", Duration::from_secs(60), || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, p) = (60, 4);
        let names: Vec<String> = (0..p).map(|i| format!("x{i}")).collect();
        let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { rng.random_range(-5.0..5.0) });
        let beta = [1.5, -2.0, 0.25, 3.0];
        let y: Vec<f64> = (0..n).map(|i| (0..p).map(|j| x[(i, j)] * beta[j]).sum()).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let exact = wls(&x, &y, &w, &names).unwrap();
        let err = exact.beta.iter().zip(beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-9, "noiseless recovery error {err}");

        let noisy: Vec<f64> = y.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
        let a = wls(&x, &noisy, &w, &names).unwrap();
        let b = irls(&x, &noisy, &w, Family::Gaussian, &names).unwrap();
        let cross = a.beta.iter().zip(&b.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(cross <= 1e-8, "IRLS vs WLS {cross}");

        let none = |_: &str| true;
        let confounded = dag(&[("x", true), ("y", true), ("z", true)], &[("z", "x"), ("z", "y"), ("x", "y")]);
        assert_eq!(confounded.backdoor_adjustment_set("x", "y", none).unwrap(), vec!["z"]);
        // M-bias: conditioning on the collider m would open x <- a -> m <- b -> y.
        let m_bias = dag(&[("x", true), ("y", true), ("a", true), ("b", true), ("m", true)], &[("a", "x"), ("a", "m"), ("b", "m"), ("b", "y"), ("x", "y")]);
        assert_eq!(m_bias.backdoor_adjustment_set("x", "y", none).unwrap(), Vec::<String>::new());
        // Unobserved confounder reached through an observed proxy; the mediator is never adjusted for.
        let proxy = dag(&[("x", true), ("y", true), ("u", false), ("w", true), ("med", true)], &[("u", "x"), ("u", "w"), ("w", "y"), ("x", "med"), ("med", "y"), ("x", "y")]);
        assert_eq!(proxy.backdoor_adjustment_set("x", "y", none).unwrap(), vec!["w"]);
        format!("noiseless error {err:.1e}, IRLS vs WLS {cross:.1e}, three backdoor sets match")
    });
}

fn run_cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_geobehave")).args(args).current_dir(dir).output().unwrap();
    assert!(out.status.success(), "geobehave {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn tree(dir: &Path) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), p.metadata().unwrap().len());
            }
        }
    }
    out
}

/// Streams both files; raw study trees are too large to hold in memory.
fn same_bytes(a: &Path, b: &Path) -> bool {
    use std::io::Read;
    let (mut fa, mut fb) = (std::fs::File::open(a).unwrap(), std::fs::File::open(b).unwrap());
    let (mut ba, mut bb) = (vec![0u8; 1 << 20], vec![0u8; 1 << 20]);
    loop {
        let n = fa.read(&mut ba).unwrap();
        if n == 0 {
            return fb.read(&mut bb).unwrap() == 0;
        }
        if fb.read_exact(&mut bb[..n]).is_err() || ba[..n] != bb[..n] {
            return false;
        }
    }
}

fn full_pipeline(dir: &Path) {
    std::fs::write(dir.join("sim.toml"), "[world]\nseed = 11\nn_regions = 6\n[population]\nn_participants = 24\n[recording]\ndays = 2\nacc_hz = [5.0, 5.0]\n").unwrap();
    let mut stdout = BTreeMap::new();
    stdout.insert("simulate", run_cli(dir, &["simulate", "--config", "sim.toml", "--out", "study"]));
    stdout.insert("ingest", run_cli(dir, &["ingest", "study/raw", "--store", "store", "--participants", "study/participants.jsonl"]));
    stdout.insert("extract", run_cli(dir, &["extract", "--store", "store", "--pois", "study/pois.jsonl", "--out", "base"]));
    stdout.insert("aggregate", run_cli(dir, &["aggregate", "--store", "store", "--regions", "study/regions.json", "--out", "agg", "--k-min", "1"]));
    stdout.insert("lec", run_cli(dir, &["lec", "--regions", "study/regions.json", "--pois", "study/pois.jsonl", "--stats", "study/stat_table.csv", "--out", "lecs.json", "--store", "store"]));
    stdout.insert("dataset", run_cli(dir, &["analyze", "dataset", "--store", "store", "--semantics", "habits", "--k-min", "1", "--out", "habits.json"]));
    stdout.insert("associate", run_cli(dir, &["analyze", "associate", "--data", "habits.json", "--exposure", "sports_facilities", "--outcome", "steps_per_hour_mean", "--out", "fit.json"]));
    let fit: Value = serde_json::from_slice(&std::fs::read(dir.join("fit.json")).unwrap()).unwrap();
    let region = fit["rows"][0]["region_id"].as_str().unwrap().to_string();
    stdout.insert("predict", run_cli(dir, &["analyze", "predict", "--fit", "fit.json", "--region", &region, "--delta", "sports_facilities=2", "--out", "prediction.json"]));
    for (k, v) in stdout {
        std::fs::write(dir.join(format!("{k}.stdout")), v).unwrap();
    }
}

#[test]
fn pipeline_determinism() {
    criterion("full-pipeline determinism", Duration::from_secs(600), || {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        full_pipeline(a.path());
        full_pipeline(b.path());
        let (ta, tb) = (tree(a.path()), tree(b.path()));
        assert_eq!(ta.keys().collect::<Vec<_>>(), tb.keys().collect::<Vec<_>>());
        for (k, len) in &ta {
            assert!(*len == tb[k] && same_bytes(&a.path().join(k), &b.path().join(k)), "{k} differs between runs");
        }
        for k in ["agg/population.jsonl", "lecs.json", "habits.json", "fit.json", "prediction.json"] {
            assert!(ta.get(k).is_some_and(|&len| len > 0), "missing output {k}");
        }
        format!("{} files byte-identical across two runs", ta.len())
    });
}
