use serde::{Deserialize, Serialize};

use super::{DozeGap, EpochMs, IngestError, RecordingSession};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapConfig {
    /// An accelerometer silence longer than this many nominal periods opens a gap.
    pub acc_gap_factor: f64,
    /// A location silence longer than this opens a gap.
    pub loc_gap_s: f64,
    /// Silences longer than this are data loss (app killed, device off), not doze.
    pub max_doze_s: f64,
    /// Nominal location sampling period.
    pub loc_period_s: f64,
    /// Whether annotated doze time counts toward monitoring coverage.
    pub count_doze_as_covered: bool,
}

impl Default for GapConfig {
    fn default() -> Self {
        Self { acc_gap_factor: 5.0, loc_gap_s: 180.0, max_doze_s: 12.0 * 3600.0, loc_period_s: 60.0, count_doze_as_covered: true }
    }
}

impl GapConfig {
    pub fn loc_period_ms(&self) -> i64 {
        (self.loc_period_s * 1000.0).round() as i64
    }

    pub fn max_doze_ms(&self) -> i64 {
        (self.max_doze_s * 1000.0).round() as i64
    }

    pub fn loc_gap_ms(&self) -> i64 {
        (self.loc_gap_s * 1000.0).round() as i64
    }
}

fn silences<T>(samples: &[T], t: impl Fn(&T) -> EpochMs, threshold_ms: f64, max_ms: i64, out: &mut Vec<DozeGap>) {
    for w in samples.windows(2) {
        let (a, b) = (t(&w[0]), t(&w[1]));
        let dt = b - a;
        if dt as f64 > threshold_ms && dt <= max_ms {
            out.push(DozeGap::new(a, b));
        }
    }
}

/// Candidate gaps from both streams, merged where they overlap.
pub fn detect_gaps(session: &RecordingSession, cfg: &GapConfig) -> Vec<DozeGap> {
    let mut cands = Vec::new();
    if let Some(period) = session.nominal_period_ms() {
        silences(&session.acc, |s| s.t, cfg.acc_gap_factor * period, cfg.max_doze_ms(), &mut cands);
    }
    silences(&session.loc, |s| s.t, cfg.loc_gap_s * 1000.0, cfg.max_doze_ms(), &mut cands);
    cands.sort_by_key(|g| (g.t_start, g.t_end));
    let mut merged: Vec<DozeGap> = Vec::with_capacity(cands.len());
    for g in cands {
        match merged.last_mut() {
            Some(last) if g.t_start < last.t_end => last.t_end = last.t_end.max(g.t_end),
            _ => merged.push(g),
        }
    }
    merged
}

/// Resolves what each gap means downstream without inserting samples: the
/// location is frozen at the last fix at or before the gap start.
pub fn impute_gap_semantics(mut session: RecordingSession) -> RecordingSession {
    for gap in &mut session.gaps {
        let idx = session.loc.partition_point(|s| s.t <= gap.t_start);
        gap.frozen_location = idx.checked_sub(1).map(|i| session.loc[i].point);
    }
    session
}

/// Gap detection plus gap semantics for a freshly parsed or generated session.
pub fn prepare_session(mut session: RecordingSession, cfg: &GapConfig) -> RecordingSession {
    if session.nominal_acc_hz.is_none() {
        session.estimate_nominal_rate();
    }
    session.gaps = detect_gaps(&session, cfg);
    impute_gap_semantics(session)
}

fn merge_intervals(mut iv: Vec<(EpochMs, EpochMs)>) -> Vec<(EpochMs, EpochMs)> {
    iv.sort_unstable();
    let mut out: Vec<(EpochMs, EpochMs)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        if b <= a {
            continue;
        }
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Sorted, disjoint intervals during which the session's behavior is known:
/// each accelerometer sample covers one nominal period, each fix one location
/// period, and (optionally) annotated gaps.
pub fn recorded_intervals(session: &RecordingSession, cfg: &GapConfig) -> Vec<(EpochMs, EpochMs)> {
    let mut iv = Vec::new();
    if let Some(period) = session.nominal_period_ms() {
        // Timestamps are whole milliseconds, so a fractional period is rounded
        // up; rounding down would split a steady stream at every longer step.
        let p = period.ceil().max(1.0) as i64;
        // Consecutive samples produce abutting spans, so fold them into runs here.
        let mut run: Option<(EpochMs, EpochMs)> = None;
        for s in &session.acc {
            run = match run {
                Some((a, b)) if s.t <= b => Some((a, b.max(s.t + p))),
                Some(r) => {
                    iv.push(r);
                    Some((s.t, s.t + p))
                }
                None => Some((s.t, s.t + p)),
            };
        }
        iv.extend(run);
    }
    let lp = cfg.loc_period_ms();
    iv.extend(session.loc.iter().map(|s| (s.t, s.t + lp)));
    if cfg.count_doze_as_covered {
        iv.extend(session.gaps.iter().map(|g| (g.t_start, g.t_end)));
    }
    merge_intervals(iv)
}

/// Fraction of `window` covered by recorded data or annotated gaps across all
/// of a participant's sessions.
pub fn monitoring_coverage(sessions: &[RecordingSession], window: (EpochMs, EpochMs), cfg: &GapConfig) -> Result<f64, IngestError> {
    let (from, to) = window;
    if to <= from {
        return Err(IngestError::InvalidArgument(format!("empty coverage window [{from}, {to})")));
    }
    let all: Vec<_> = sessions.iter().flat_map(|s| recorded_intervals(s, cfg)).collect();
    let covered: i64 = merge_intervals(all).into_iter().map(|(a, b)| (b.min(to) - a.max(from)).max(0)).sum();
    Ok(covered as f64 / (to - from) as f64)
}
