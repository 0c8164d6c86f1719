//! Raw sensor stream ingestion: record types, parsing, doze-gap detection and
//! annotation, monitoring coverage, and the file-backed stores.

mod gaps;
mod parse;
mod store;

pub use gaps::{detect_gaps, impute_gap_semantics, monitoring_coverage, prepare_session, recorded_intervals, GapConfig};
pub use parse::{parse_participants, parse_session, parse_session_str};
pub use store::{DocStore, PutStats, Store, StreamRecord, TimeSeriesStore};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint};

/// UTC milliseconds since the Unix epoch.
pub type EpochMs = i64;

pub const STANDARD_GRAVITY: f64 = 9.80665;
/// Accelerometer magnitude sanity bound.
pub const MAX_ACC_MAGNITUDE: f64 = 16.0 * STANDARD_GRAVITY;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("store integrity error: {0}")]
    Integrity(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl IngestError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        IngestError::Io { path: path.display().to_string(), source }
    }
}

/// One line of a raw stream file, discriminated by `s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "s", rename_all = "lowercase")]
pub enum RawRecord {
    Acc {
        t: EpochMs,
        x: f64,
        y: f64,
        z: f64,
    },
    Loc {
        t: EpochMs,
        lat: f64,
        lon: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        acc_m: Option<f64>,
    },
    Report {
        t: EpochMs,
        kind: ReportKind,
        #[serde(default)]
        payload: BTreeMap<String, Value>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        picture_ref: Option<String>,
    },
    /// Optional header naming the participant and device the file belongs to.
    Meta { pid: String, device: String },
}

/// Triaxial acceleration in m/s², device frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct AccSample {
    pub t: EpochMs,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl AccSample {
    pub fn magnitude(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.x.is_finite() && self.y.is_finite() && self.z.is_finite()) {
            return Err(IngestError::Invalid(format!("non-finite acceleration at t={}", self.t)));
        }
        if self.magnitude() > MAX_ACC_MAGNITUDE {
            return Err(IngestError::Invalid(format!("acceleration magnitude {:.1} exceeds 16 g at t={}", self.magnitude(), self.t)));
        }
        Ok(())
    }
}

impl TryFrom<RawRecord> for AccSample {
    type Error = IngestError;

    fn try_from(r: RawRecord) -> Result<Self, IngestError> {
        match r {
            RawRecord::Acc { t, x, y, z } => {
                let s = AccSample { t, x, y, z };
                s.validate()?;
                Ok(s)
            }
            _ => Err(IngestError::Invalid("expected an acc record".into())),
        }
    }
}

impl From<AccSample> for RawRecord {
    fn from(s: AccSample) -> Self {
        RawRecord::Acc { t: s.t, x: s.x, y: s.y, z: s.z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct LocSample {
    pub t: EpochMs,
    pub point: GeoPoint,
    pub accuracy_m: Option<f64>,
}

impl TryFrom<RawRecord> for LocSample {
    type Error = IngestError;

    fn try_from(r: RawRecord) -> Result<Self, IngestError> {
        match r {
            RawRecord::Loc { t, lat, lon, acc_m } => {
                let point = GeoPoint::new(lat, lon)?;
                if let Some(a) = acc_m {
                    if !(a >= 0.0) || !a.is_finite() {
                        return Err(IngestError::Invalid(format!("negative location accuracy {a} at t={t}")));
                    }
                }
                Ok(LocSample { t, point, accuracy_m: acc_m })
            }
            _ => Err(IngestError::Invalid("expected a loc record".into())),
        }
    }
}

impl From<LocSample> for RawRecord {
    fn from(s: LocSample) -> Self {
        RawRecord::Loc { t: s.t, lat: s.point.lat, lon: s.point.lon, acc_m: s.accuracy_m }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Meal,
    FoodAd,
    MoodQuestionnaire,
    OnboardingQuestionnaire,
}

/// Self-reported entry. Pictures are opaque references and never decoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct SelfReport {
    pub t: EpochMs,
    pub kind: ReportKind,
    pub payload: BTreeMap<String, Value>,
    pub picture_ref: Option<String>,
}

impl TryFrom<RawRecord> for SelfReport {
    type Error = IngestError;

    fn try_from(r: RawRecord) -> Result<Self, IngestError> {
        match r {
            RawRecord::Report { t, kind, payload, picture_ref } => {
                if kind == ReportKind::Meal && !payload.contains_key("meal_type") {
                    return Err(IngestError::Invalid(format!("meal report at t={t} lacks `meal_type`")));
                }
                Ok(SelfReport { t, kind, payload, picture_ref })
            }
            _ => Err(IngestError::Invalid("expected a report record".into())),
        }
    }
}

impl From<SelfReport> for RawRecord {
    fn from(s: SelfReport) -> Self {
        RawRecord::Report { t: s.t, kind: s.kind, payload: s.payload, picture_ref: s.picture_ref }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BmiCategory {
    Underweight,
    Normal,
    Overweight,
    Obese,
}

/// Pseudonymous participant record. Carries no direct identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParticipantRecord", into = "ParticipantRecord")]
pub struct Participant {
    pub pid: String,
    pub age_years: u8,
    pub sex: Sex,
    pub bmi_category: BmiCategory,
    pub home_region_id: String,
    pub has_smartwatch: bool,
    /// Local time offset from UTC, used only for day/night splits.
    pub utc_offset_min: i32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParticipantRecord {
    pid: String,
    age_years: u8,
    sex: Sex,
    bmi_category: BmiCategory,
    home_region_id: String,
    has_smartwatch: bool,
    #[serde(default)]
    utc_offset_min: i32,
}

impl TryFrom<ParticipantRecord> for Participant {
    type Error = IngestError;

    fn try_from(r: ParticipantRecord) -> Result<Self, IngestError> {
        if !(9..=18).contains(&r.age_years) {
            return Err(IngestError::Invalid(format!("participant {} age {} outside 9..=18", r.pid, r.age_years)));
        }
        validate_id(&r.pid)?;
        Ok(Participant {
            pid: r.pid,
            age_years: r.age_years,
            sex: r.sex,
            bmi_category: r.bmi_category,
            home_region_id: r.home_region_id,
            has_smartwatch: r.has_smartwatch,
            utc_offset_min: r.utc_offset_min,
        })
    }
}

impl From<Participant> for ParticipantRecord {
    fn from(p: Participant) -> Self {
        ParticipantRecord {
            pid: p.pid,
            age_years: p.age_years,
            sex: p.sex,
            bmi_category: p.bmi_category,
            home_region_id: p.home_region_id,
            has_smartwatch: p.has_smartwatch,
            utc_offset_min: p.utc_offset_min,
        }
    }
}

/// Ids double as store path components.
pub fn validate_id(id: &str) -> Result<(), IngestError> {
    if id.is_empty() || id.len() > 128 || !id.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'_' || c == b'-') {
        return Err(IngestError::Invalid(format!("id `{id}` must be 1-128 chars of [A-Za-z0-9_-]")));
    }
    Ok(())
}

/// Interval where the device suspended recording. After
/// [`impute_gap_semantics`] it carries the frozen location (if any earlier fix
/// exists); acceleration inside a gap is gravity only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DozeGap {
    pub t_start: EpochMs,
    pub t_end: EpochMs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_location: Option<GeoPoint>,
}

impl DozeGap {
    pub fn new(t_start: EpochMs, t_end: EpochMs) -> Self {
        debug_assert!(t_end > t_start);
        Self { t_start, t_end, frozen_location: None }
    }

    pub fn duration_ms(&self) -> i64 {
        self.t_end - self.t_start
    }

    pub fn overlap_ms(&self, from: EpochMs, to: EpochMs) -> i64 {
        (self.t_end.min(to) - self.t_start.max(from)).max(0)
    }
}

/// One participant-device stream.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordingSession {
    pub pid: String,
    pub device_id: String,
    pub acc: Vec<AccSample>,
    pub loc: Vec<LocSample>,
    pub reports: Vec<SelfReport>,
    pub gaps: Vec<DozeGap>,
    pub nominal_acc_hz: Option<f64>,
    pub warnings: Vec<String>,
}

impl RecordingSession {
    pub fn new(pid: &str, device_id: &str) -> Self {
        Self { pid: pid.into(), device_id: device_id.into(), ..Default::default() }
    }

    /// Sorts every stream by time and drops later duplicates of a timestamp.
    pub fn normalize(&mut self) {
        // Streams usually arrive in order; one check pass avoids two more.
        if !self.acc.windows(2).all(|w| w[0].t < w[1].t) {
            self.acc.sort_by_key(|s| s.t);
            self.acc.dedup_by_key(|s| s.t);
        }
        if !self.loc.windows(2).all(|w| w[0].t < w[1].t) {
            self.loc.sort_by_key(|s| s.t);
            self.loc.dedup_by_key(|s| s.t);
        }
        self.reports.sort_by_key(|s| (s.t, s.kind));
        self.reports.dedup_by_key(|s| (s.t, s.kind));
    }

    /// Median reciprocal inter-sample interval of the accelerometer stream.
    pub fn estimate_nominal_rate(&mut self) {
        self.nominal_acc_hz = estimate_rate_hz(&self.acc);
        self.warnings.retain(|w| !w.starts_with("nominal accelerometer rate"));
        if let Some(hz) = self.nominal_acc_hz {
            if !(5.0..=15.0).contains(&hz) {
                self.warnings.push(format!("nominal accelerometer rate {hz:.2} Hz outside 5-15 Hz"));
            }
        }
    }

    pub fn nominal_period_ms(&self) -> Option<f64> {
        self.nominal_acc_hz.map(|hz| 1000.0 / hz)
    }

    /// Time span touched by any stream or gap.
    pub fn time_span(&self) -> Option<(EpochMs, EpochMs)> {
        let firsts = [self.acc.first().map(|s| s.t), self.loc.first().map(|s| s.t), self.gaps.first().map(|g| g.t_start)];
        let lasts = [self.acc.last().map(|s| s.t), self.loc.last().map(|s| s.t), self.gaps.last().map(|g| g.t_end)];
        let lo = firsts.into_iter().flatten().min()?;
        let hi = lasts.into_iter().flatten().max()?;
        Some((lo, hi))
    }

    pub fn sample_counts(&self) -> (usize, usize, usize) {
        (self.acc.len(), self.loc.len(), self.reports.len())
    }
}

fn estimate_rate_hz(acc: &[AccSample]) -> Option<f64> {
    // Exact median of the positive steps. Steps are almost always short, so
    // they are counted in a histogram and only long ones are sorted.
    const DENSE: usize = 4096;
    let mut counts = vec![0usize; DENSE];
    let mut long: Vec<i64> = Vec::new();
    let mut n = 0usize;
    for w in acc.windows(2) {
        let d = w[1].t - w[0].t;
        if d <= 0 {
            continue;
        }
        n += 1;
        match usize::try_from(d) {
            Ok(i) if i < DENSE => counts[i] += 1,
            _ => long.push(d),
        }
    }
    if n == 0 {
        return None;
    }
    long.sort_unstable();
    let nth = |k: usize| -> i64 {
        let mut seen = 0;
        for (d, &c) in counts.iter().enumerate() {
            seen += c;
            if seen > k {
                return d as i64;
            }
        }
        long[k - seen]
    };
    let mid = n / 2;
    let median = if n % 2 == 0 { (nth(mid - 1) + nth(mid)) as f64 / 2.0 } else { nth(mid) as f64 };
    Some(1000.0 / median)
}
