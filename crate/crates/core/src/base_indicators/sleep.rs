use chrono::NaiveDate;

use super::{ActivityType, EpochFeature, ExtractConfig, SleepRecord};
use crate::geo::{haversine_m, GeoPoint};
use crate::ingest::{EpochMs, LocSample, Participant};

const DAY_MS: i64 = 86_400_000;

/// UTC bounds of the night window ending on local day `date`.
pub fn night_window(date: NaiveDate, utc_offset_min: i32, cfg: &ExtractConfig) -> (EpochMs, EpochMs) {
    let days = date.signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")).num_days();
    let local_midnight = days * DAY_MS - utc_offset_min as i64 * 60_000;
    let start = local_midnight - DAY_MS + (cfg.sleep_window_start_h * 3_600_000.0).round() as i64;
    let end = local_midnight + (cfg.sleep_window_end_h * 3_600_000.0).round() as i64;
    (start, end)
}

/// Local calendar day containing UTC time `t`.
pub fn local_date(t: EpochMs, utc_offset_min: i32) -> NaiveDate {
    let local = t + utc_offset_min as i64 * 60_000;
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date") + chrono::Duration::days(local.div_euclid(DAY_MS))
}

/// Longest quiet stretch of the night ending on `date`. Absent for
/// participants without a smartwatch and for nights without any data.
pub fn sleep_duration(participant: &Participant, epochs: &[EpochFeature], loc: &[LocSample], date: NaiveDate, cfg: &ExtractConfig) -> Option<SleepRecord> {
    if !participant.has_smartwatch {
        return None;
    }
    let (from, to) = night_window(date, participant.utc_offset_min, cfg);
    let lo = epochs.partition_point(|e| e.t_start < from);
    let night: Vec<&EpochFeature> = epochs[lo..].iter().take_while(|e| e.t_start < to).collect();
    if !night.iter().any(|e| e.activity_type != ActivityType::Unknown) {
        return None;
    }
    let threshold = cfg.sleep_threshold_cpm();
    let epoch_ms = cfg.epoch_s as i64 * 1000;
    let scale = 60.0 / cfg.epoch_s as f64;
    let last_fix_before = |t: EpochMs| -> Option<GeoPoint> {
        let i = loc.partition_point(|s| s.t <= t);
        i.checked_sub(1).map(|k| loc[k].point)
    };

    // Quiet epochs: low counts and no displacement from where the run began.
    let mut quiet = Vec::with_capacity(night.len());
    let mut moved = Vec::with_capacity(night.len());
    let mut anchor: Option<GeoPoint> = None;
    let mut in_run = false;
    for e in &night {
        let (a, b) = (e.t_start, e.t_start + epoch_ms);
        if !in_run {
            anchor = last_fix_before(a);
        }
        let lo = loc.partition_point(|s| s.t < a);
        let fixes = loc[lo..].iter().take_while(|s| s.t < b);
        let mut still = true;
        for f in fixes {
            match anchor {
                None => anchor = Some(f.point),
                Some(p) if haversine_m(p, f.point) > cfg.sleep_max_displacement_m => still = false,
                _ => {}
            }
        }
        let q = e.activity_type != ActivityType::Unknown && e.activity_counts * scale < threshold && still;
        quiet.push(q);
        moved.push(!still);
        in_run = q;
    }

    // Quiet runs as epoch index ranges, bridged across short interruptions
    // that involve no change of place.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < quiet.len() {
        if quiet[i] {
            let s = i;
            while i < quiet.len() && quiet[i] {
                i += 1;
            }
            runs.push((s, i));
        } else {
            i += 1;
        }
    }
    let bridge = (cfg.sleep_bridge_min * 60.0 / cfg.epoch_s as f64).round() as i64;
    let mut merged: Vec<(EpochMs, EpochMs)> = Vec::new();
    let mut prev_end = 0;
    for (s, e) in runs {
        let (ts, te) = (night[s].t_start, night[e - 1].t_start + epoch_ms);
        let relocated = moved[prev_end..s].iter().any(|&m| m);
        match merged.last_mut() {
            Some(last) if !relocated && (ts - last.1) / epoch_ms < bridge => last.1 = te,
            _ => merged.push((ts, te)),
        }
        prev_end = e;
    }
    let longest = merged.iter().map(|(a, b)| b - a).max().unwrap_or(0);
    let hours = (longest as f64 / 3_600_000.0).min(cfg.sleep_max_h);
    Some(SleepRecord { pid: participant.pid.clone(), date: date.format("%Y-%m-%d").to_string(), duration_h: hours })
}
