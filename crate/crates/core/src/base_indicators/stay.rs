use super::{PoiVisit, StayPoint};
use crate::geo::{haversine_m, GeoPoint, PoiIndex};
use crate::ingest::LocSample;

/// Greedy stay-point scan: from each anchor, extend while fixes stay within
/// `dist_m` of the anchor; emit when the extent spans at least `min_dur_s`.
pub fn detect_stay_points(track: &[LocSample], dist_m: f64, min_dur_s: f64) -> Vec<StayPoint> {
    let min_ms = (min_dur_s * 1000.0).round() as i64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < track.len() {
        let mut j = i + 1;
        while j < track.len() && haversine_m(track[i].point, track[j].point) <= dist_m {
            j += 1;
        }
        if track[j - 1].t - track[i].t >= min_ms {
            let members = &track[i..j];
            let k = members.len() as f64;
            let lat = members.iter().map(|s| s.point.lat).sum::<f64>() / k;
            let lon = members.iter().map(|s| s.point.lon).sum::<f64>() / k;
            out.push(StayPoint {
                center: GeoPoint::new(lat, lon).expect("mean of valid points"),
                t_enter: track[i].t,
                t_exit: track[j - 1].t,
                n_fixes: members.len(),
            });
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Assigns each stay point to the nearest POI within `radius_m` (ties to the
/// smaller id). Unmatched stay points are dropped.
pub fn match_visits(pid: &str, stays: &[StayPoint], idx: &PoiIndex, radius_m: f64) -> Vec<PoiVisit> {
    stays
        .iter()
        .filter_map(|s| {
            let (poi, _) = idx.nearest_within(s.center, radius_m, None)?;
            Some(PoiVisit {
                pid: pid.to_string(),
                poi_id: poi.id.clone(),
                poi_type: poi.poi_type.clone(),
                t_enter: s.t_enter,
                t_exit: s.t_exit,
                stay_center: s.center,
            })
        })
        .collect()
}
