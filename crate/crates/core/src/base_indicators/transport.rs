use super::{EpochFeature, ExtractConfig, TransportMode, TransportSegment};
use crate::geo::haversine_m;
use crate::ingest::{DozeGap, EpochMs, LocSample};

/// Position error assumed for fixes without an accuracy estimate.
const DEFAULT_ACCURACY_M: f64 = 10.0;

fn weighted_median(mut vals: Vec<(f64, f64)>) -> f64 {
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = vals.iter().map(|v| v.1).sum();
    let mut acc = 0.0;
    for (v, w) in &vals {
        acc += w;
        if acc >= total / 2.0 {
            return *v;
        }
    }
    vals.last().map(|v| v.0).unwrap_or(0.0)
}

fn covered_by_gap(gaps: &[DozeGap], a: EpochMs, b: EpochMs) -> bool {
    gaps.iter().any(|g| g.t_start <= a && g.t_end >= b)
}

fn mode_for_speed(v: f64, cfg: &ExtractConfig) -> TransportMode {
    if v < cfg.still_max_mps {
        TransportMode::Still
    } else if v < cfg.walking_max_mps {
        TransportMode::Walking
    } else if v < cfg.bicycle_max_mps {
        TransportMode::Bicycle
    } else {
        TransportMode::Vehicle
    }
}

fn merge_same(segs: Vec<TransportSegment>) -> Vec<TransportSegment> {
    let mut out: Vec<TransportSegment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(last) if last.mode == s.mode && last.t_end == s.t_start => last.t_end = s.t_end,
            _ => out.push(s),
        }
    }
    out
}

/// Repeatedly folds the shortest segment under `min_ms` into its longer neighbor.
fn absorb_short(mut segs: Vec<TransportSegment>, min_ms: i64) -> Vec<TransportSegment> {
    loop {
        if segs.len() <= 1 {
            return segs;
        }
        let Some((i, _)) = segs
            .iter()
            .enumerate()
            .filter(|(_, s)| s.t_end - s.t_start < min_ms)
            .min_by_key(|(i, s)| (s.t_end - s.t_start, *i))
        else {
            return segs;
        };
        let left = i.checked_sub(1).map(|j| segs[j].t_end - segs[j].t_start);
        let right = segs.get(i + 1).map(|s| s.t_end - s.t_start);
        let into_left = match (left, right) {
            (Some(l), Some(r)) => l >= r,
            (Some(_), None) => true,
            _ => false,
        };
        let s = segs.remove(i);
        if into_left {
            segs[i - 1].t_end = s.t_end;
        } else {
            segs[i].t_start = s.t_start;
        }
        segs = merge_same(segs);
    }
}

fn steps_in(epochs: &[EpochFeature], a: EpochMs, b: EpochMs) -> u64 {
    let lo = epochs.partition_point(|e| e.t_start + e.duration_s as i64 * 1000 <= a);
    epochs[lo..].iter().take_while(|e| e.t_start < b).map(|e| e.steps as u64).sum()
}

/// Transport-mode segments over `window` from the location track. `epochs`
/// provides the concurrent step evidence required for walking.
pub fn detect_transport(
    loc: &[LocSample],
    gaps: &[DozeGap],
    epochs: &[EpochFeature],
    window: (EpochMs, EpochMs),
    loc_gap_ms: i64,
    cfg: &ExtractConfig,
) -> Vec<TransportSegment> {
    let (from, to) = window;
    let track: Vec<&LocSample> = loc.iter().filter(|s| s.t >= from && s.t <= to).collect();
    if track.len() < 2 {
        return if to > from { vec![TransportSegment { t_start: from, t_end: to, mode: TransportMode::Unknown }] } else { Vec::new() };
    }
    // Interval k spans fixes k and k+1.
    let n = track.len() - 1;
    let silent: Vec<bool> = (0..n).map(|k| track[k + 1].t - track[k].t > loc_gap_ms).collect();
    let speed: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let (a, b) = (track[k], track[k + 1]);
            let dt = (b.t - a.t) as f64 / 1000.0;
            let acc = a.accuracy_m.unwrap_or(DEFAULT_ACCURACY_M) + b.accuracy_m.unwrap_or(DEFAULT_ACCURACY_M);
            (haversine_m(a.point, b.point) / dt, 1.0 / acc.max(1.0))
        })
        .collect();
    let mut segs: Vec<TransportSegment> = (0..n)
        .map(|k| {
            let (a, b) = (track[k].t, track[k + 1].t);
            let mode = if silent[k] {
                if covered_by_gap(gaps, a, b) {
                    TransportMode::Still
                } else {
                    TransportMode::Unknown
                }
            } else {
                let nb: Vec<(f64, f64)> =
                    [k.checked_sub(1), Some(k), Some(k + 1)].into_iter().flatten().filter(|&j| j < n && !silent[j]).map(|j| speed[j]).collect();
                mode_for_speed(weighted_median(nb), cfg)
            };
            TransportSegment { t_start: a, t_end: b, mode }
        })
        .collect();
    segs = merge_same(segs);
    for s in &mut segs {
        if s.mode == TransportMode::Walking && steps_in(epochs, s.t_start, s.t_end) == 0 {
            s.mode = TransportMode::Unknown;
        }
    }
    absorb_short(merge_same(segs), (cfg.min_segment_s * 1000.0).round() as i64)
}
