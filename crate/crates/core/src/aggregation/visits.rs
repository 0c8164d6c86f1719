use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::geo::{geohash, GeoPoint, Region, RegionShape};
use crate::ingest::{DozeGap, EpochMs, LocSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionVisit {
    pub pid: String,
    pub region_id: String,
    pub t_enter: EpochMs,
    pub t_exit: EpochMs,
    /// Long enough to count for visit-based indicators.
    pub qualifying: bool,
}

impl RegionVisit {
    pub fn duration_ms(&self) -> i64 {
        self.t_exit - self.t_enter
    }
}

/// Point-to-region lookup: geohash regions by code, polygons by bbox prefilter.
pub struct RegionLookup<'a> {
    regions: &'a [Region],
    by_hash: HashMap<&'a str, Vec<usize>>,
    precisions: Vec<usize>,
    polygons: Vec<usize>,
}

impl<'a> RegionLookup<'a> {
    pub fn new(regions: &'a [Region]) -> Self {
        let mut by_hash: HashMap<&str, Vec<usize>> = HashMap::new();
        let mut polygons = Vec::new();
        for (i, r) in regions.iter().enumerate() {
            match &r.shape {
                RegionShape::Geohash(g) => by_hash.entry(g.as_str()).or_default().push(i),
                RegionShape::Polygon(_) => polygons.push(i),
            }
        }
        let mut precisions: Vec<usize> = by_hash.keys().map(|g| g.len()).collect();
        precisions.sort_unstable();
        precisions.dedup();
        Self { regions, by_hash, precisions, polygons }
    }

    /// Indices of every region containing `p`, ascending.
    pub fn containing(&self, p: GeoPoint) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(&max) = self.precisions.last() {
            let code = geohash::encode(p, max).expect("precision within range");
            for &k in &self.precisions {
                if let Some(ids) = self.by_hash.get(&code[..k]) {
                    out.extend(ids.iter().copied().filter(|&i| self.regions[i].contains(p)));
                }
            }
        }
        out.extend(self.polygons.iter().copied().filter(|&i| self.regions[i].contains(p)));
        out.sort_unstable();
        out
    }
}

/// Region visits from a participant's merged track. A visit starts at the
/// first fix inside and ends at the first fix outside. An annotated doze gap
/// keeps the visit open (the location is frozen); an unannotated silence
/// longer than `loc_gap_ms` ends it at the last fix before the silence.
pub fn region_visits(pid: &str, loc: &[LocSample], gaps: &[DozeGap], regions: &[Region], loc_gap_ms: i64, min_visit_ms: i64) -> Vec<RegionVisit> {
    let lookup = RegionLookup::new(regions);
    let mut open: BTreeMap<usize, EpochMs> = BTreeMap::new();
    let mut out = Vec::new();
    let close = |i: usize, a: EpochMs, b: EpochMs, out: &mut Vec<RegionVisit>| {
        if b > a {
            out.push(RegionVisit { pid: pid.to_string(), region_id: regions[i].id.clone(), t_enter: a, t_exit: b, qualifying: b - a >= min_visit_ms });
        }
    };
    for (k, fix) in loc.iter().enumerate() {
        if k > 0 {
            let (a, b) = (loc[k - 1].t, fix.t);
            let lost = b - a > loc_gap_ms && !gaps.iter().any(|g| g.t_start <= a && g.t_end >= b);
            if lost {
                for (i, start) in std::mem::take(&mut open) {
                    close(i, start, a, &mut out);
                }
            }
        }
        let inside = lookup.containing(fix.point);
        let leaving: Vec<usize> = open.keys().copied().filter(|i| inside.binary_search(i).is_err()).collect();
        for i in leaving {
            let start = open.remove(&i).expect("open visit");
            close(i, start, fix.t, &mut out);
        }
        for i in inside {
            open.entry(i).or_insert(fix.t);
        }
    }
    if let Some(last) = loc.last() {
        for (i, start) in open {
            close(i, start, last.t, &mut out);
        }
    }
    out.sort_by(|a, b| (a.t_enter, &a.region_id).cmp(&(b.t_enter, &b.region_id)));
    out
}
