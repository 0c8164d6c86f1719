//! Per-participant raw streams and their ground truth.

use std::collections::BTreeMap;

use geobehave_core::ingest::{Participant, RecordingSession, ReportKind, SelfReport};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RecordingConfig;
use crate::plan::{self, Act, Plan, DAY, HOUR, MIN};
use crate::population::BehaviorProfile;
use crate::signal::{self, merge, Orientation};
use crate::world::World;
use crate::{participant_stream, stream_rng, SimError};

pub const PHONE: &str = "phone";
pub const WATCH: &str = "watch";

/// One stay in a region and whether it included a fast-food stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayTruth {
    pub region_id: String,
    pub t_start: i64,
    pub t_end: i64,
    /// At least 10 minutes long and clear of outages.
    pub opportunity: bool,
    pub fast_food: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingTruth {
    pub pid: String,
    /// Device id to accelerometer rate; `None` for a device without acceleration.
    pub devices: BTreeMap<String, Option<f64>>,
    pub compliance: f64,
    pub window: (i64, i64),
    /// Intervals where no device records anything.
    pub outages: Vec<(i64, i64)>,
    /// Phone doze intervals; the watch keeps sampling.
    pub doze: Vec<(i64, i64)>,
    /// Steps taken per day, keyed `YYYY-MM-DD`.
    pub daily_steps: BTreeMap<String, u64>,
    /// Hours asleep for nights the watch recorded in full, keyed by wake date.
    pub sleep_h: BTreeMap<String, f64>,
    pub region_stays: Vec<StayTruth>,
    /// Drawn fast-food stops that found no outlet within reach.
    pub fast_food_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct Recording {
    pub sessions: Vec<RecordingSession>,
    pub truth: RecordingTruth,
}

/// Phone doze during a night: suspensions of 45 to 120 minutes separated by
/// 2-minute wake-ups, ending at least 5 minutes before wake time.
fn doze(plan: &Plan, rng: &mut impl Rng) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for s in &plan.sleeps {
        let first = if s.t0 == plan.window.0 { 2 * MIN } else { (rng.random_range(10.0..20.0) * MIN as f64) as i64 };
        if plan.outages.iter().any(|&(a, b)| s.t0 <= b && a <= s.t1) {
            continue;
        }
        let stop = s.t1 - 5 * MIN;
        let mut t = s.t0 + first;
        loop {
            let len = (rng.random_range(45.0..120.0) * MIN as f64) as i64;
            if t + len > stop {
                break;
            }
            out.push((t, t + len));
            t += len + 2 * MIN;
        }
    }
    out
}

fn report(t: i64, kind: ReportKind, payload: &[(&str, Value)], picture_ref: Option<String>) -> SelfReport {
    SelfReport { t, kind, payload: payload.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(), picture_ref }
}

/// Self-reports on the phone: onboarding on the first morning, then meals,
/// food advertisements and an evening mood questionnaire.
fn reports(plan: &Plan, pid: &str, rng: &mut impl Rng) -> Vec<SelfReport> {
    let mut out = Vec::new();
    let onboarding = plan.wake[0] + 10 * MIN;
    if !plan.in_outage(onboarding) {
        out.push(report(onboarding, ReportKind::OnboardingQuestionnaire, &[], None));
    }
    let days = ((plan.window.1 - plan.window.0) / DAY) as usize;
    for d in 0..days {
        let day0 = plan.window.0 + d as i64 * DAY;
        let date = plan.date_of(day0);
        let meals = [
            ("breakfast", at(rng, plan.wake[d] + 10 * MIN, 30.0), 0.8),
            ("lunch", at(rng, day0 + 12 * HOUR, 60.0), 0.8),
            ("snack", at(rng, day0 + 15 * HOUR, 120.0), 0.3),
            ("dinner", at(rng, day0 + 19 * HOUR, 60.0), 0.8),
        ];
        for (k, (meal, t, p)) in meals.into_iter().enumerate() {
            if rng.random::<f64>() < p && !plan.in_outage(t) {
                let picture = Some(format!("img/{pid}/{date}-{k}"));
                out.push(report(t, ReportKind::Meal, &[("meal_type", Value::from(meal))], picture));
            }
        }
        let ad = at(rng, day0 + 16 * HOUR, 300.0);
        if rng.random::<f64>() < 0.2 && !plan.in_outage(ad) {
            out.push(report(ad, ReportKind::FoodAd, &[], None));
        }
        let mood_t = at(rng, day0 + 20 * HOUR, 30.0);
        let mood: u8 = rng.random_range(1..=5);
        if rng.random::<f64>() < 0.5 && !plan.in_outage(mood_t) {
            out.push(report(mood_t, ReportKind::MoodQuestionnaire, &[("mood", Value::from(mood))], None));
        }
    }
    out
}

fn at(rng: &mut impl Rng, from: i64, minutes: f64) -> i64 {
    from + (rng.random_range(0.0..minutes) * MIN as f64) as i64
}

fn finish(mut s: RecordingSession) -> RecordingSession {
    s.normalize();
    s.estimate_nominal_rate();
    s
}

/// Generates the raw sessions of one participant. Gaps are left for ingest
/// to detect. Every random draw comes from the participant's own stream.
pub fn generate_recordings(world: &World, participant: &Participant, profile: &BehaviorProfile, cfg: &RecordingConfig, seed: u64) -> Result<Recording, SimError> {
    cfg.validate()?;
    if participant.pid != profile.pid {
        return Err(SimError::Config(format!("profile {} does not belong to participant {}", profile.pid, participant.pid)));
    }
    let home = world.region_index(&participant.home_region_id).ok_or_else(|| SimError::World(format!("unknown home region {}", participant.home_region_id)))?;
    let mut rng = stream_rng(seed, participant_stream(&participant.pid));
    let window = cfg.window();
    let start = cfg.start().map_err(SimError::Config)?;
    let sensors = !profile.sensorless;
    let plan = plan::build(world, home, profile, window, start, sensors, &mut rng);

    let phone_hz = rng.random_range(cfg.acc_hz[0]..=cfg.acc_hz[1]);
    let phone_o = Orientation::draw(&mut rng);
    let watch_hz = rng.random_range(cfg.acc_hz[0]..=cfg.acc_hz[1]);
    let watch_o = Orientation::draw(&mut rng);
    let doze = if sensors { doze(&plan, &mut rng) } else { Vec::new() };
    let reports = reports(&plan, &participant.pid, &mut rng);

    let acc = sensors && cfg.accelerometer;
    let watch = acc && participant.has_smartwatch;
    let mut devices = BTreeMap::new();
    let mut phone = RecordingSession::new(&participant.pid, PHONE);
    let phone_off = merge(plan.outages.iter().chain(&doze).copied().collect());
    if sensors {
        let mut loc_rng = stream_rng(seed, participant_stream(&participant.pid) ^ 1);
        phone.loc = signal::locations(&plan.legs, &phone_off, window, cfg.loc_period_s as i64 * 1000, cfg.gps_noise_m, &mut loc_rng);
    }
    if acc {
        let mut acc_rng = stream_rng(seed, participant_stream(&participant.pid) ^ 2);
        phone.acc = signal::accelerometer(&plan.segments, &phone_off, window, phone_hz, phone_o, &mut acc_rng);
    }
    devices.insert(PHONE.to_string(), acc.then_some(phone_hz));
    phone.reports = reports;
    let mut sessions = vec![finish(phone)];
    if watch {
        let mut w = RecordingSession::new(&participant.pid, WATCH);
        let mut acc_rng = stream_rng(seed, participant_stream(&participant.pid) ^ 3);
        w.acc = signal::accelerometer(&plan.segments, &merge(plan.outages.clone()), window, watch_hz, watch_o, &mut acc_rng);
        devices.insert(WATCH.to_string(), Some(watch_hz));
        sessions.push(finish(w));
    }

    let days = ((window.1 - window.0) / DAY) as i64;
    let mut daily_steps: BTreeMap<String, u64> = (0..days).map(|d| ((start + chrono::Duration::days(d)).to_string(), 0)).collect();
    for s in &plan.segments {
        if let Act::Walk { cycles, .. } | Act::Run { cycles, .. } = s.act {
            *daily_steps.entry(plan.date_of(s.t0).to_string()).or_default() += cycles;
        }
    }
    let sleep_h = if watch {
        plan.sleeps
            .iter()
            .filter(|s| s.complete && !plan.outages.iter().any(|&(a, b)| s.t0 < b && a < s.t1))
            .map(|s| (s.date.to_string(), (s.t1 - s.t0) as f64 / HOUR as f64))
            .collect()
    } else {
        BTreeMap::new()
    };
    let truth = RecordingTruth {
        pid: participant.pid.clone(),
        devices,
        compliance: profile.compliance,
        window,
        outages: plan.outages.clone(),
        doze,
        daily_steps,
        sleep_h,
        region_stays: plan.stays,
        fast_food_skipped: plan.fast_food_skipped,
    };
    Ok(Recording { sessions, truth })
}
