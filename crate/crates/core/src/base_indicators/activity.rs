use std::collections::BTreeMap;

use super::filter::Cascade;
use super::{ActivityType, CutPoints, EpochFeature, ExtractConfig};
use crate::ingest::{AccSample, EpochMs, RecordingSession};

/// Index ranges of accelerometer samples without internal silences.
fn runs(acc: &[AccSample], max_dt_ms: f64) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=acc.len() {
        if i == acc.len() || (acc[i].t - acc[i - 1].t) as f64 > max_dt_ms {
            if i > start {
                out.push(start..i);
            }
            start = i;
        }
    }
    out
}

fn magnitudes(acc: &[AccSample]) -> Vec<f64> {
    acc.iter().map(AccSample::magnitude).collect()
}

/// Centered rolling standard deviation over `half` samples on each side.
fn rolling_std(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut s = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for (i, v) in x.iter().enumerate() {
        s[i + 1] = s[i] + v;
        s2[i + 1] = s2[i] + v * v;
    }
    (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(n));
            let k = (hi - lo) as f64;
            let mean = (s[hi] - s[lo]) / k;
            ((s2[hi] - s2[lo]) / k - mean * mean).max(0.0).sqrt()
        })
        .collect()
}

/// Indices of step peaks in an already band-passed signal.
pub(crate) fn detect_peaks(y: &[f64], t: &[EpochMs], fs: f64, cfg: &ExtractConfig) -> Vec<usize> {
    let n = y.len();
    if n < 3 {
        return Vec::new();
    }
    let half = ((cfg.step_std_window_s * fs) / 2.0).round() as usize;
    let sd = rolling_std(y, half);
    let mut cands: Vec<usize> = (1..n - 1)
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > (cfg.step_threshold_factor * sd[i]).max(cfg.step_threshold_floor))
        .collect();
    let min_dist_ms = (cfg.step_min_distance_s * 1000.0).round() as i64;
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| y[cands[b]].total_cmp(&y[cands[a]]).then(a.cmp(&b)));
    let mut removed = vec![false; cands.len()];
    for &k in &order {
        if removed[k] {
            continue;
        }
        let tk = t[cands[k]];
        for j in (0..k).rev() {
            if tk - t[cands[j]] >= min_dist_ms {
                break;
            }
            removed[j] = true;
        }
        for j in k + 1..cands.len() {
            if t[cands[j]] - tk >= min_dist_ms {
                break;
            }
            removed[j] = true;
        }
    }
    let mut i = 0;
    cands.retain(|_| {
        i += 1;
        !removed[i - 1]
    });
    cands
}

/// Timestamps of detected steps across the whole session.
pub fn step_times(session: &RecordingSession, cfg: &ExtractConfig) -> Vec<EpochMs> {
    let Some(fs) = session.nominal_acc_hz else { return Vec::new() };
    let period_ms = 1000.0 / fs;
    let cascade = Cascade::bandpass(cfg.steps_band.0, cfg.steps_band.1, fs);
    let mut out = Vec::new();
    for r in runs(&session.acc, cfg.run_split_periods * period_ms) {
        let acc = &session.acc[r];
        let y = cascade.filtfilt(&magnitudes(acc));
        let t: Vec<EpochMs> = acc.iter().map(|s| s.t).collect();
        out.extend(detect_peaks(&y, &t, fs, cfg).into_iter().map(|i| t[i]));
    }
    out
}

/// Number of steps in `[from, to)`. Doze gaps hold no samples and so contribute none.
pub fn count_steps(session: &RecordingSession, window: (EpochMs, EpochMs), cfg: &ExtractConfig) -> u64 {
    step_times(session, cfg).into_iter().filter(|&t| t >= window.0 && t < window.1).count() as u64
}

pub fn classify_activity(counts_per_min: f64, cut: &CutPoints) -> ActivityType {
    if counts_per_min < cut.c1 {
        ActivityType::Sedentary
    } else if counts_per_min < cut.c2 {
        ActivityType::Light
    } else if counts_per_min < cut.c3 {
        ActivityType::Moderate
    } else {
        ActivityType::Vigorous
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    counts: f64,
    steps: u32,
    samples: u32,
    covered_ms: i64,
    gap_ms: i64,
}

fn add_span(map: &mut BTreeMap<i64, Acc>, epoch_ms: i64, a: EpochMs, b: EpochMs, gap: bool) {
    let mut e = a.div_euclid(epoch_ms);
    while e * epoch_ms < b {
        let (lo, hi) = ((e * epoch_ms).max(a), ((e + 1) * epoch_ms).min(b));
        if hi > lo {
            let slot = map.entry(e).or_default();
            slot.covered_ms += hi - lo;
            if gap {
                slot.gap_ms += hi - lo;
            }
        }
        e += 1;
    }
}

/// Per-epoch activity counts, steps and intensity class for one session.
/// Epochs cover the session's accelerometer and gap span on a UTC-aligned grid.
pub fn epoch_features(session: &RecordingSession, cfg: &ExtractConfig) -> Vec<EpochFeature> {
    let Some(fs) = session.nominal_acc_hz else { return Vec::new() };
    let epoch_ms = cfg.epoch_s as i64 * 1000;
    let period_ms = 1000.0 / fs;
    let counts_filter = Cascade::bandpass(cfg.counts_band.0, cfg.counts_band.1, fs);
    let steps_filter = Cascade::bandpass(cfg.steps_band.0, cfg.steps_band.1, fs);
    let mut map: BTreeMap<i64, Acc> = BTreeMap::new();
    let p = period_ms.round().max(1.0) as i64;
    for r in runs(&session.acc, cfg.run_split_periods * period_ms) {
        let acc = &session.acc[r];
        let mag = magnitudes(acc);
        let t: Vec<EpochMs> = acc.iter().map(|s| s.t).collect();
        let yc = counts_filter.filtfilt(&mag);
        for (i, &ti) in t.iter().enumerate() {
            let slot = map.entry(ti.div_euclid(epoch_ms)).or_default();
            slot.counts += yc[i].abs() / fs;
            slot.samples += 1;
        }
        drop(yc);
        let ys = steps_filter.filtfilt(&mag);
        for i in detect_peaks(&ys, &t, fs, cfg) {
            map.entry(t[i].div_euclid(epoch_ms)).or_default().steps += 1;
        }
        // Sample spans, folded into one run-long interval per contiguous run.
        let (a, b) = (t[0], t[t.len() - 1] + p);
        add_span(&mut map, epoch_ms, a, b, false);
    }
    for g in &session.gaps {
        add_span(&mut map, epoch_ms, g.t_start, g.t_end, true);
    }
    let (Some(&first), Some(&last)) = (map.keys().next(), map.keys().next_back()) else { return Vec::new() };
    let scale = 60.0 / cfg.epoch_s as f64;
    (first..=last)
        .map(|e| {
            let a = map.get(&e).copied().unwrap_or_default();
            let activity_type = if a.samples == 0 && a.gap_ms == 0 {
                ActivityType::Unknown
            } else {
                classify_activity(a.counts * scale, &cfg.cut_points)
            };
            EpochFeature {
                t_start: e * epoch_ms,
                duration_s: cfg.epoch_s,
                activity_counts: a.counts,
                steps: a.steps,
                activity_type,
                samples: a.samples,
                coverage: (a.covered_ms.min(epoch_ms) as f64 / epoch_ms as f64).min(1.0),
            }
        })
        .collect()
}

/// Combines epoch series from several accelerometer devices by
/// coverage-weighted mean per epoch.
pub fn merge_device_epochs(series: Vec<Vec<EpochFeature>>, cfg: &ExtractConfig) -> Vec<EpochFeature> {
    let mut nonempty: Vec<Vec<EpochFeature>> = series.into_iter().filter(|s| !s.is_empty()).collect();
    if nonempty.len() <= 1 {
        return nonempty.pop().unwrap_or_default();
    }
    let mut by_t: BTreeMap<EpochMs, Vec<EpochFeature>> = BTreeMap::new();
    for s in nonempty {
        for e in s {
            by_t.entry(e.t_start).or_default().push(e);
        }
    }
    let epoch_ms = cfg.epoch_s as i64 * 1000;
    let (first, last) = (*by_t.keys().next().expect("non-empty"), *by_t.keys().next_back().expect("non-empty"));
    let scale = 60.0 / cfg.epoch_s as f64;
    (0..=(last - first) / epoch_ms)
        .map(|k| {
            let t = first + k * epoch_ms;
            let known: Vec<&EpochFeature> = by_t.get(&t).map(|v| v.iter().filter(|e| e.activity_type != ActivityType::Unknown).collect()).unwrap_or_default();
            let w: f64 = known.iter().map(|e| e.coverage).sum();
            if known.is_empty() || w <= 0.0 {
                let samples = by_t.get(&t).map(|v| v.iter().map(|e| e.samples).sum()).unwrap_or(0);
                return EpochFeature { t_start: t, duration_s: cfg.epoch_s, activity_counts: 0.0, steps: 0, activity_type: ActivityType::Unknown, samples, coverage: 0.0 };
            }
            let counts = known.iter().map(|e| e.activity_counts * e.coverage).sum::<f64>() / w;
            let steps = (known.iter().map(|e| e.steps as f64 * e.coverage).sum::<f64>() / w).round() as u32;
            EpochFeature {
                t_start: t,
                duration_s: cfg.epoch_s,
                activity_counts: counts,
                steps,
                activity_type: classify_activity(counts * scale, &cfg.cut_points),
                samples: known.iter().map(|e| e.samples).sum(),
                coverage: known.iter().map(|e| e.coverage).fold(0.0, f64::max),
            }
        })
        .collect()
}
