//! Per-participant base indicators: activity counts, steps and intensity per
//! minute, transport modes, stay points and POI visits, and nightly sleep.

mod activity;
pub mod filter;
mod sleep;
mod stay;
mod transport;

pub use activity::{classify_activity, count_steps, epoch_features, merge_device_epochs, step_times};
pub use sleep::{local_date, night_window, sleep_duration};
pub use stay::{detect_stay_points, match_visits};
pub use transport::detect_transport;

use serde::{Deserialize, Serialize};

use crate::geo::{GeoPoint, PoiIndex, PoiType};
use crate::ingest::{DozeGap, EpochMs, GapConfig, LocSample, Participant, RecordingSession};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityType {
    Sedentary,
    Light,
    Moderate,
    Vigorous,
    Unknown,
}

impl ActivityType {
    pub const KNOWN: [ActivityType; 4] = [ActivityType::Sedentary, ActivityType::Light, ActivityType::Moderate, ActivityType::Vigorous];

    pub fn as_str(&self) -> &'static str {
        match self {
            ActivityType::Sedentary => "sedentary",
            ActivityType::Light => "light",
            ActivityType::Moderate => "moderate",
            ActivityType::Vigorous => "vigorous",
            ActivityType::Unknown => "unknown",
        }
    }
}

/// One minute of accelerometer-derived features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochFeature {
    pub t_start: EpochMs,
    pub duration_s: u32,
    pub activity_counts: f64,
    pub steps: u32,
    pub activity_type: ActivityType,
    /// Accelerometer samples inside the epoch.
    pub samples: u32,
    /// Fraction of the epoch covered by samples or annotated gaps.
    pub coverage: f64,
}

impl EpochFeature {
    pub fn t_end(&self) -> EpochMs {
        self.t_start + self.duration_s as i64 * 1000
    }

    pub fn is_known(&self) -> bool {
        self.activity_type != ActivityType::Unknown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Still,
    Walking,
    Bicycle,
    Vehicle,
    Unknown,
}

impl TransportMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransportMode::Still => "still",
            TransportMode::Walking => "walking",
            TransportMode::Bicycle => "bicycle",
            TransportMode::Vehicle => "vehicle",
            TransportMode::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportSegment {
    pub t_start: EpochMs,
    pub t_end: EpochMs,
    pub mode: TransportMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StayPoint {
    pub center: GeoPoint,
    pub t_enter: EpochMs,
    pub t_exit: EpochMs,
    pub n_fixes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiVisit {
    pub pid: String,
    pub poi_id: String,
    pub poi_type: PoiType,
    pub t_enter: EpochMs,
    pub t_exit: EpochMs,
    pub stay_center: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SleepRecord {
    pub pid: String,
    /// Local calendar day the night ends on, `YYYY-MM-DD`.
    pub date: String,
    pub duration_h: f64,
}

/// Intensity cut-points on counts per minute: sedentary below `c1`, light
/// below `c2`, moderate below `c3`, vigorous from `c3` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutPoints {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for CutPoints {
    /// Calibrated against the simulator's labeled intensities.
    fn default() -> Self {
        CutPoints { c1: 5.0, c2: 40.0, c3: 160.0 }
    }
}

impl CutPoints {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.c1 > 0.0 && self.c1 < self.c2 && self.c2 < self.c3) {
            return Err(format!("cut-points must satisfy 0 < c1 < c2 < c3, got {self:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub epoch_s: u32,
    pub counts_band: (f64, f64),
    pub steps_band: (f64, f64),
    pub step_threshold_factor: f64,
    pub step_threshold_floor: f64,
    pub step_std_window_s: f64,
    pub step_min_distance_s: f64,
    /// Accelerometer silences longer than this many periods split filtering runs.
    pub run_split_periods: f64,
    pub cut_points: CutPoints,
    pub still_max_mps: f64,
    pub walking_max_mps: f64,
    pub bicycle_max_mps: f64,
    pub min_segment_s: f64,
    pub stay_dist_m: f64,
    pub stay_min_dur_s: f64,
    pub match_radius_m: f64,
    pub sleep_window_start_h: f64,
    pub sleep_window_end_h: f64,
    pub sleep_bridge_min: f64,
    pub sleep_max_displacement_m: f64,
    pub sleep_max_h: f64,
    /// Counts per minute below which an epoch is quiet; defaults to 5% of `c1`.
    pub sleep_threshold_cpm: Option<f64>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            epoch_s: 60,
            counts_band: (0.25, 2.5),
            steps_band: (0.5, 3.0),
            step_threshold_factor: 0.3,
            step_threshold_floor: 0.8,
            step_std_window_s: 4.0,
            step_min_distance_s: 0.25,
            run_split_periods: 5.0,
            cut_points: CutPoints::default(),
            still_max_mps: 0.5,
            walking_max_mps: 2.5,
            bicycle_max_mps: 7.0,
            min_segment_s: 120.0,
            stay_dist_m: 100.0,
            stay_min_dur_s: 600.0,
            match_radius_m: 75.0,
            sleep_window_start_h: 18.0,
            sleep_window_end_h: 12.0,
            sleep_bridge_min: 10.0,
            sleep_max_displacement_m: 50.0,
            sleep_max_h: 16.0,
            sleep_threshold_cpm: None,
        }
    }
}

impl ExtractConfig {
    pub fn sleep_threshold_cpm(&self) -> f64 {
        self.sleep_threshold_cpm.unwrap_or(0.05 * self.cut_points.c1)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.cut_points.validate()?;
        if self.epoch_s == 0 || 60 % self.epoch_s != 0 && self.epoch_s % 60 != 0 {
            return Err(format!("epoch_s {} must divide or be a multiple of 60", self.epoch_s));
        }
        if !(self.counts_band.0 < self.counts_band.1 && self.steps_band.0 < self.steps_band.1) {
            return Err("filter bands must be increasing".into());
        }
        if !(self.still_max_mps < self.walking_max_mps && self.walking_max_mps < self.bicycle_max_mps) {
            return Err("speed bands must be increasing".into());
        }
        Ok(())
    }
}

/// All base indicators of one participant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaseIndicators {
    pub pid: String,
    pub epochs: Vec<EpochFeature>,
    pub transport: Vec<TransportSegment>,
    pub stays: Vec<StayPoint>,
    pub visits: Vec<PoiVisit>,
    pub sleep: Vec<SleepRecord>,
}

/// One line of a per-participant indicator file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum BaseRecord {
    Epoch(EpochFeature),
    Transport(TransportSegment),
    Stay(StayPoint),
    Visit(PoiVisit),
    Sleep(SleepRecord),
}

impl BaseIndicators {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let records = self
            .epochs
            .iter()
            .map(|e| BaseRecord::Epoch(*e))
            .chain(self.transport.iter().map(|t| BaseRecord::Transport(*t)))
            .chain(self.stays.iter().map(|s| BaseRecord::Stay(*s)))
            .chain(self.visits.iter().cloned().map(BaseRecord::Visit))
            .chain(self.sleep.iter().cloned().map(BaseRecord::Sleep));
        for r in records {
            out.push_str(&serde_json::to_string(&r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(pid: &str, text: &str) -> Result<Self, serde_json::Error> {
        let mut b = BaseIndicators { pid: pid.to_string(), ..Default::default() };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str(line)? {
                BaseRecord::Epoch(e) => b.epochs.push(e),
                BaseRecord::Transport(t) => b.transport.push(t),
                BaseRecord::Stay(s) => b.stays.push(s),
                BaseRecord::Visit(v) => b.visits.push(v),
                BaseRecord::Sleep(s) => b.sleep.push(s),
            }
        }
        Ok(b)
    }
}

/// Union of all sessions' fixes (time-ordered, one per timestamp) and gaps (merged).
pub fn merged_track(sessions: &[RecordingSession]) -> (Vec<LocSample>, Vec<DozeGap>) {
    let mut loc: Vec<LocSample> = sessions.iter().flat_map(|s| s.loc.iter().copied()).collect();
    loc.sort_by_key(|s| s.t);
    loc.dedup_by_key(|s| s.t);
    let mut gaps: Vec<DozeGap> = sessions.iter().flat_map(|s| s.gaps.iter().copied()).collect();
    gaps.sort_by_key(|g| (g.t_start, g.t_end));
    let mut merged: Vec<DozeGap> = Vec::with_capacity(gaps.len());
    for g in gaps {
        match merged.last_mut() {
            Some(last) if g.t_start <= last.t_end => last.t_end = last.t_end.max(g.t_end),
            _ => merged.push(g),
        }
    }
    (loc, merged)
}

/// Splits a track where consecutive fixes are separated by an unannotated silence.
pub fn split_at_data_loss<'a>(loc: &'a [LocSample], gaps: &[DozeGap], loc_gap_ms: i64) -> Vec<&'a [LocSample]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=loc.len() {
        let cut = i == loc.len() || {
            let (a, b) = (loc[i - 1].t, loc[i].t);
            b - a > loc_gap_ms && !gaps.iter().any(|g| g.t_start <= a && g.t_end >= b)
        };
        if cut {
            if i > start {
                out.push(&loc[start..i]);
            }
            start = i;
        }
    }
    out
}

/// Runs every extractor over a participant's sessions.
pub fn extract_participant(participant: &Participant, sessions: &[RecordingSession], idx: &PoiIndex, cfg: &ExtractConfig, gap_cfg: &GapConfig) -> BaseIndicators {
    let epochs = merge_device_epochs(sessions.iter().map(|s| epoch_features(s, cfg)).collect(), cfg);
    let (loc, gaps) = merged_track(sessions);
    let transport = match (loc.first(), loc.last()) {
        (Some(a), Some(b)) if b.t > a.t => detect_transport(&loc, &gaps, &epochs, (a.t, b.t), gap_cfg.loc_gap_ms(), cfg),
        _ => Vec::new(),
    };
    let stays: Vec<StayPoint> =
        split_at_data_loss(&loc, &gaps, gap_cfg.loc_gap_ms()).into_iter().flat_map(|piece| detect_stay_points(piece, cfg.stay_dist_m, cfg.stay_min_dur_s)).collect();
    let visits = match_visits(&participant.pid, &stays, idx, cfg.match_radius_m);
    let mut sleep = Vec::new();
    if participant.has_smartwatch {
        if let (Some(first), Some(last)) = (epochs.first(), epochs.last()) {
            let mut d = local_date(first.t_start, participant.utc_offset_min);
            let end = local_date(last.t_end(), participant.utc_offset_min) + chrono::Duration::days(1);
            while d <= end {
                sleep.extend(sleep_duration(participant, &epochs, &loc, d, cfg));
                d += chrono::Duration::days(1);
            }
        }
    }
    BaseIndicators { pid: participant.pid.clone(), epochs, transport, stays, visits, sleep }
}
