//! Individual summaries and region-level population indicators under the
//! habits (residents, full period) and resources (visitors, visit intervals
//! only) semantics. Every population output passes the privacy gate.

mod visits;

pub use visits::{region_visits, RegionLookup, RegionVisit};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_indicators::{extract_participant, merged_track, night_window, ActivityType, BaseIndicators, EpochFeature, ExtractConfig, PoiVisit};
use crate::geo::{PoiIndex, PoiType, Region, FAST_FOOD};
use crate::ingest::{EpochMs, GapConfig, Participant, RecordingSession};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Semantics {
    Habits,
    Resources,
}

impl Semantics {
    pub fn as_str(&self) -> &'static str {
        match self {
            Semantics::Habits => "habits",
            Semantics::Resources => "resources",
        }
    }
}

impl std::str::FromStr for Semantics {
    type Err = AggregationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "habits" => Ok(Semantics::Habits),
            "resources" => Ok(Semantics::Resources),
            other => Err(AggregationError::InvalidArgument(format!("unknown semantics `{other}`"))),
        }
    }
}

/// Half-open `[from, to)` time interval in UTC ms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub from: EpochMs,
    pub to: EpochMs,
}

impl Period {
    pub fn new(from: EpochMs, to: EpochMs) -> Result<Self, AggregationError> {
        if to <= from {
            return Err(AggregationError::InvalidArgument(format!("empty period {from}..{to}")));
        }
        Ok(Period { from, to })
    }

    pub fn all() -> Self {
        Period { from: EpochMs::MIN, to: EpochMs::MAX }
    }

    pub fn contains(&self, t: EpochMs) -> bool {
        t >= self.from && t < self.to
    }
}

impl std::str::FromStr for Period {
    type Err = AggregationError;

    /// `<from_ms>..<to_ms>`; either side may be empty for an open bound.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AggregationError::InvalidArgument(format!("period `{s}` is not <from_ms>..<to_ms>"));
        let (a, b) = s.split_once("..").ok_or_else(bad)?;
        let from = if a.is_empty() { EpochMs::MIN } else { a.trim().parse().map_err(|_| bad())? };
        let to = if b.is_empty() { EpochMs::MAX } else { b.trim().parse().map_err(|_| bad())? };
        Period::new(from, to)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndicatorValue {
    Number(f64),
    Histogram(BTreeMap<String, f64>),
}

impl IndicatorValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            IndicatorValue::Number(v) => Some(*v),
            IndicatorValue::Histogram(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualIndicator {
    pub pid: String,
    pub name: String,
    pub value: IndicatorValue,
    pub recorded_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationIndicator {
    pub region_id: String,
    pub name: String,
    pub semantics: Semantics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Distinct contributing participants; withheld (0) once suppressed.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub n: usize,
    pub suppressed: bool,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// Suppresses any indicator backed by fewer than `k_min` contributors.
pub fn privacy_gate(mut ind: PopulationIndicator, k_min: usize) -> PopulationIndicator {
    if ind.n < k_min {
        ind.suppressed = true;
        ind.value = None;
        ind.n = 0;
    } else {
        ind.suppressed = ind.value.is_none();
    }
    ind
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub k_min: usize,
    pub min_visit_s: f64,
    /// Residents need strictly more recorded data than this to contribute.
    pub min_recorded_hours: f64,
    /// Residents averaging strictly fewer steps per hour are sedentary.
    pub sedentary_steps_per_hour: f64,
    pub fast_food_type: String,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { k_min: 10, min_visit_s: 600.0, min_recorded_hours: 20.0, sedentary_steps_per_hour: 450.0, fast_food_type: FAST_FOOD.to_string() }
    }
}

impl AggregationConfig {
    pub fn min_visit_ms(&self) -> i64 {
        (self.min_visit_s * 1000.0).round() as i64
    }
}

fn epochs_in(epochs: &[EpochFeature], from: EpochMs, to: EpochMs) -> &[EpochFeature] {
    let lo = epochs.partition_point(|e| e.t_start < from);
    let hi = epochs.partition_point(|e| e.t_start < to);
    &epochs[lo..hi]
}

/// Covered hours and steps per covered hour over known epochs.
fn step_rate(epochs: &[EpochFeature]) -> Option<(f64, f64)> {
    let known: Vec<&EpochFeature> = epochs.iter().filter(|e| e.is_known()).collect();
    let secs: f64 = known.iter().map(|e| e.duration_s as f64).sum();
    if secs <= 0.0 {
        return None;
    }
    let steps: f64 = known.iter().map(|e| e.steps as f64).sum();
    Some((secs / 3600.0, steps / secs * 3600.0))
}

fn pct_class(epochs: &[EpochFeature], class: ActivityType) -> Option<f64> {
    let known: Vec<&EpochFeature> = epochs.iter().filter(|e| e.is_known()).collect();
    let total: f64 = known.iter().map(|e| e.duration_s as f64).sum();
    if total <= 0.0 {
        return None;
    }
    Some(100.0 * known.iter().filter(|e| e.activity_type == class).map(|e| e.duration_s as f64).sum::<f64>() / total)
}

fn shares(weights: BTreeMap<String, f64>) -> Option<BTreeMap<String, f64>> {
    let total: f64 = weights.values().sum();
    (total > 0.0).then(|| weights.into_iter().map(|(k, v)| (k, v / total)).collect())
}

/// Time-weighted summaries over the covered part of `period`. Empty when
/// nothing in the period is covered.
pub fn individual_summary(participant: &Participant, base: &BaseIndicators, period: Period) -> Vec<IndividualIndicator> {
    let epochs = epochs_in(&base.epochs, period.from, period.to);
    let Some((hours, rate)) = step_rate(epochs) else { return Vec::new() };
    let pid = &participant.pid;
    let mk = |name: &str, value: IndicatorValue| IndividualIndicator { pid: pid.clone(), name: name.to_string(), value, recorded_hours: hours };
    let mut out = vec![mk("steps_per_hour_mean", IndicatorValue::Number(rate))];
    for class in ActivityType::KNOWN {
        let v = pct_class(epochs, class).expect("covered time is positive");
        out.push(mk(&format!("pct_time_{}", class.as_str()), IndicatorValue::Number(v)));
    }
    let mut modes: BTreeMap<String, f64> = BTreeMap::new();
    for s in &base.transport {
        let d = (s.t_end.min(period.to) - s.t_start.max(period.from)).max(0) as f64;
        if d > 0.0 {
            *modes.entry(s.mode.as_str().to_string()).or_default() += d;
        }
    }
    if let Some(h) = shares(modes) {
        out.push(mk("transport_mode_share", IndicatorValue::Histogram(h)));
    }
    let visits: Vec<&PoiVisit> = base.visits.iter().filter(|v| v.t_exit > period.from && v.t_enter < period.to).collect();
    if !visits.is_empty() {
        let mut by_type: BTreeMap<String, f64> = BTreeMap::new();
        for v in &visits {
            *by_type.entry(v.poi_type.as_str().to_string()).or_default() += 1.0;
        }
        out.push(mk("poi_visit_count", IndicatorValue::Number(visits.len() as f64)));
        out.push(mk("visits_by_poi_type", IndicatorValue::Histogram(shares(by_type).expect("non-empty"))));
    }
    let nights: Vec<f64> = base
        .sleep
        .iter()
        .filter(|s| {
            chrono::NaiveDate::parse_from_str(&s.date, "%Y-%m-%d")
                .map(|d| {
                    let (a, b) = night_window(d, participant.utc_offset_min, &Default::default());
                    a < period.to && b > period.from
                })
                .unwrap_or(false)
        })
        .map(|s| s.duration_h)
        .collect();
    if !nights.is_empty() {
        out.push(mk("mean_sleep_h", IndicatorValue::Number(nights.iter().sum::<f64>() / nights.len() as f64)));
    }
    out
}

/// Everything aggregation needs about one participant.
#[derive(Debug, Clone)]
pub struct ParticipantData {
    pub participant: Participant,
    pub base: BaseIndicators,
    pub visits: Vec<RegionVisit>,
}

impl ParticipantData {
    /// Base indicators and region visits from prepared sessions.
    pub fn from_sessions(
        participant: Participant,
        sessions: &[RecordingSession],
        idx: &PoiIndex,
        regions: &[Region],
        extract: &ExtractConfig,
        gaps: &GapConfig,
        agg: &AggregationConfig,
    ) -> Self {
        let base = extract_participant(&participant, sessions, idx, extract, gaps);
        let (loc, merged) = merged_track(sessions);
        let visits = region_visits(&participant.pid, &loc, &merged, regions, gaps.loc_gap_ms(), agg.min_visit_ms());
        ParticipantData { participant, base, visits }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fold {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Recipe {
    /// Per-contributor value of an individual-style measure, then folded.
    Measure(Measure, Fold),
    PctFastFoodVisits,
    PctSedentaryResidents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Measure {
    StepsPerHour,
    PctTimeSedentary,
    MeanSleep,
}

struct Definition {
    name: &'static str,
    recipe: Recipe,
    semantics: &'static [Semantics],
}

const BOTH: &[Semantics] = &[Semantics::Habits, Semantics::Resources];
const HABITS: &[Semantics] = &[Semantics::Habits];
const RESOURCES: &[Semantics] = &[Semantics::Resources];

const REGISTRY: &[Definition] = &[
    Definition { name: "steps_per_hour_mean", recipe: Recipe::Measure(Measure::StepsPerHour, Fold::Mean), semantics: BOTH },
    Definition { name: "median_steps_per_hour", recipe: Recipe::Measure(Measure::StepsPerHour, Fold::Median), semantics: BOTH },
    Definition { name: "pct_time_sedentary", recipe: Recipe::Measure(Measure::PctTimeSedentary, Fold::Mean), semantics: BOTH },
    Definition { name: "mean_sleep_h", recipe: Recipe::Measure(Measure::MeanSleep, Fold::Mean), semantics: HABITS },
    Definition { name: "pct_fastfood_visits", recipe: Recipe::PctFastFoodVisits, semantics: RESOURCES },
    Definition { name: "pct_sedentary_residents", recipe: Recipe::PctSedentaryResidents, semantics: HABITS },
];

/// Registered `(indicator, semantics)` pairs in a stable order.
pub fn registered_indicators() -> Vec<(&'static str, Semantics)> {
    REGISTRY.iter().flat_map(|d| d.semantics.iter().map(move |s| (d.name, *s))).collect()
}

/// Whether the indicator is a percentage of contributors or visits.
pub fn is_percentage(name: &str) -> bool {
    name.starts_with("pct_")
}

fn fold(mut values: Vec<f64>, how: Fold) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    match how {
        Fold::Mean => Some(values.iter().sum::<f64>() / values.len() as f64),
        Fold::Median => {
            values.sort_by(f64::total_cmp);
            let m = values.len() / 2;
            Some(if values.len() % 2 == 0 { (values[m - 1] + values[m]) / 2.0 } else { values[m] })
        }
    }
}

/// Computes gated population indicators over a fixed set of participants.
pub struct Aggregator<'a> {
    data: &'a [ParticipantData],
    cfg: AggregationConfig,
}

impl<'a> Aggregator<'a> {
    pub fn new(data: &'a [ParticipantData], cfg: AggregationConfig) -> Self {
        Self { data, cfg }
    }

    pub fn config(&self) -> &AggregationConfig {
        &self.cfg
    }

    fn residents(&self, region: &Region) -> impl Iterator<Item = &'a ParticipantData> + '_ {
        let id = region.id.clone();
        self.data.iter().filter(move |d| d.participant.home_region_id == id)
    }

    /// Residents with strictly more than the minimum recorded hours in the period.
    fn eligible_residents(&self, region: &Region, period: Period) -> Vec<(&'a ParticipantData, f64, f64)> {
        self.residents(region)
            .filter_map(|d| {
                let (hours, rate) = step_rate(epochs_in(&d.base.epochs, period.from, period.to))?;
                (hours > self.cfg.min_recorded_hours).then_some((d, hours, rate))
            })
            .collect()
    }

    /// Qualifying visits to the region, clipped to the period.
    fn qualifying_visits(&self, region: &Region, period: Period) -> Vec<(&'a ParticipantData, EpochMs, EpochMs)> {
        let min = self.cfg.min_visit_ms();
        let mut out = Vec::new();
        for d in self.data {
            for v in d.visits.iter().filter(|v| v.region_id == region.id) {
                let (a, b) = (v.t_enter.max(period.from), v.t_exit.min(period.to));
                if b - a >= min {
                    out.push((d, a, b));
                }
            }
        }
        out
    }

    fn measure(&self, m: Measure, d: &ParticipantData, from: EpochMs, to: EpochMs) -> Option<f64> {
        let epochs = epochs_in(&d.base.epochs, from, to);
        match m {
            Measure::StepsPerHour => step_rate(epochs).map(|(_, r)| r),
            Measure::PctTimeSedentary => pct_class(epochs, ActivityType::Sedentary),
            Measure::MeanSleep => {
                let period = Period { from, to };
                individual_summary(&d.participant, &d.base, period).into_iter().find(|i| i.name == "mean_sleep_h").and_then(|i| i.value.as_number())
            }
        }
    }

    /// The ungated indicator. Only for callers that gate it themselves.
    fn compute(&self, name: &str, semantics: Semantics, region: &Region, period: Period) -> Result<PopulationIndicator, AggregationError> {
        let def = REGISTRY.iter().find(|d| d.name == name).ok_or_else(|| AggregationError::InvalidArgument(format!("unknown indicator `{name}`")))?;
        if !def.semantics.contains(&semantics) {
            return Err(AggregationError::InvalidArgument(format!("indicator `{name}` is not defined under {} semantics", semantics.as_str())));
        }
        let (value, n) = match (def.recipe, semantics) {
            (Recipe::PctFastFoodVisits, _) => self.fast_food(region, period),
            (Recipe::PctSedentaryResidents, _) => self.sedentary(region, period),
            (Recipe::Measure(m, f), Semantics::Habits) => {
                let vals: Vec<f64> = self.eligible_residents(region, period).into_iter().filter_map(|(d, _, _)| self.measure(m, d, period.from, period.to)).collect();
                let n = vals.len();
                (fold(vals, f), n)
            }
            (Recipe::Measure(m, f), Semantics::Resources) => {
                let mut who = BTreeSet::new();
                let vals: Vec<f64> = self
                    .qualifying_visits(region, period)
                    .into_iter()
                    .filter_map(|(d, a, b)| {
                        let v = self.measure(m, d, a, b)?;
                        who.insert(d.participant.pid.as_str());
                        Some(v)
                    })
                    .collect();
                (fold(vals, f), who.len())
            }
        };
        Ok(PopulationIndicator { region_id: region.id.clone(), name: name.to_string(), semantics, value, n, suppressed: false })
    }

    fn fast_food(&self, region: &Region, period: Period) -> (Option<f64>, usize) {
        let ff = PoiType::new(self.cfg.fast_food_type.clone());
        let visits = self.qualifying_visits(region, period);
        let hits = visits.iter().filter(|(d, a, b)| d.base.visits.iter().any(|p| p.poi_type.is_under(&ff) && p.t_enter < *b && p.t_exit > *a)).count();
        let who: BTreeSet<&str> = visits.iter().map(|(d, _, _)| d.participant.pid.as_str()).collect();
        ((!visits.is_empty()).then(|| 100.0 * hits as f64 / visits.len() as f64), who.len())
    }

    fn sedentary(&self, region: &Region, period: Period) -> (Option<f64>, usize) {
        let eligible = self.eligible_residents(region, period);
        let sedentary = eligible.iter().filter(|(_, _, rate)| *rate < self.cfg.sedentary_steps_per_hour).count();
        let n = eligible.len();
        ((n > 0).then(|| 100.0 * sedentary as f64 / n as f64), n)
    }

    /// Gated population indicator.
    pub fn aggregate(&self, name: &str, semantics: Semantics, region: &Region, period: Period) -> Result<PopulationIndicator, AggregationError> {
        Ok(privacy_gate(self.compute(name, semantics, region, period)?, self.cfg.k_min))
    }

    pub fn pct_fastfood_visits(&self, region: &Region, period: Period) -> PopulationIndicator {
        self.aggregate("pct_fastfood_visits", Semantics::Resources, region, period).expect("registered")
    }

    pub fn pct_sedentary_residents(&self, region: &Region, period: Period) -> PopulationIndicator {
        self.aggregate("pct_sedentary_residents", Semantics::Habits, region, period).expect("registered")
    }

    /// Every registered indicator for every region, gated.
    pub fn all(&self, regions: &[Region], period: Period) -> Vec<PopulationIndicator> {
        let mut out = Vec::new();
        for r in regions {
            for (name, sem) in registered_indicators() {
                out.push(self.aggregate(name, sem, r, period).expect("registered"));
            }
        }
        out
    }
}
