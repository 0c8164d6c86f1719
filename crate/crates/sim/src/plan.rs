//! A participant's whole study window as a timeline: where they are (legs),
//! what their body is doing (activity segments), when they sleep, and when
//! the app is not running (outages).
//!
//! Each day runs home, school (weekdays), a leisure region, home. Moves
//! between places go by vehicle in a straight line; fast-food stops are walks
//! to an outlet inside the region being visited. Every place is kept clear of
//! fast-food outlets so only actual stops can match one.

use chrono::{Datelike, NaiveDate, Weekday};
use geobehave_core::geo::{GeoPoint, PoiType, FAST_FOOD};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::population::{logistic, BehaviorProfile};
use crate::recording::StayTruth;
use crate::world::{local_dist_m, World, RESTAURANT_DENSITY};

pub(crate) const MIN: i64 = 60_000;
pub(crate) const HOUR: i64 = 60 * MIN;
pub(crate) const DAY: i64 = 24 * HOUR;

const VEHICLE_MPS: f64 = 10.0;
const WALK_MPS: f64 = 1.3;
/// Places keep this far from cell edges; POIs keep 25 m.
const PLACE_EDGE_MARGIN_M: f64 = 40.0;
/// Beyond the 75 m match radius plus the stay-center error of a dwell.
const PLACE_FF_CLEARANCE_M: f64 = 110.0;
/// Everyone is home by then, so an outage starting on arrival spans at least
/// 13 hours and is never mistaken for doze.
const LATEST_HOME: i64 = 18 * HOUR + 30 * MIN;
const SLOT: i64 = 15 * MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PlaceKind {
    Home,
    School,
    Leisure,
    FastFood,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum LegKind {
    Dwell(PlaceKind),
    Vehicle,
    Walk,
}

/// Straight movement from `from` to `to` over `[t0, t1)`; a dwell has both equal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Leg {
    pub t0: i64,
    pub t1: i64,
    pub from: GeoPoint,
    pub to: GeoPoint,
    /// Region of the dwell, or the destination region of a move.
    pub region: usize,
    pub kind: LegKind,
}

impl Leg {
    pub fn position(&self, t: i64) -> GeoPoint {
        if self.t1 <= self.t0 || self.from == self.to {
            return self.to;
        }
        let f = ((t - self.t0) as f64 / (self.t1 - self.t0) as f64).clamp(0.0, 1.0);
        GeoPoint { lat: self.from.lat + f * (self.to.lat - self.from.lat), lon: self.from.lon + f * (self.to.lon - self.from.lon) }
    }

    fn is_dwell(&self) -> bool {
        matches!(self.kind, LegKind::Dwell(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Act {
    Sleep,
    Vehicle,
    Light,
    Walk { hz: f64, cycles: u64 },
    Run { hz: f64, cycles: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Segment {
    pub t0: i64,
    pub t1: i64,
    pub act: Act,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Sleep {
    pub t0: i64,
    pub t1: i64,
    /// Day the night ends on.
    pub date: NaiveDate,
    /// Both ends fall inside the window.
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub window: (i64, i64),
    pub start: NaiveDate,
    pub legs: Vec<Leg>,
    pub sleeps: Vec<Sleep>,
    pub outages: Vec<(i64, i64)>,
    pub segments: Vec<Segment>,
    pub stays: Vec<StayTruth>,
    pub fast_food_skipped: usize,
    /// Wake time of each day, for placing self-reports.
    pub wake: Vec<i64>,
}

impl Plan {
    pub fn date_of(&self, t: i64) -> NaiveDate {
        self.start + chrono::Duration::days((t - self.window.0).div_euclid(DAY))
    }

    pub fn in_outage(&self, t: i64) -> bool {
        self.outages.iter().any(|&(a, b)| t >= a && t < b)
    }
}

fn overlaps(a: (i64, i64), list: &[(i64, i64)]) -> bool {
    list.iter().any(|&(x, y)| a.0 < y && x < a.1)
}

/// `[a, b)` minus every interval in `cut`.
fn subtract(a: i64, b: i64, cut: &[(i64, i64)]) -> Vec<(i64, i64)> {
    let mut cut: Vec<(i64, i64)> = cut.iter().copied().filter(|&(x, y)| x < b && y > a).collect();
    cut.sort_unstable();
    let mut out = Vec::new();
    let mut t = a;
    for (x, y) in cut {
        if x > t {
            out.push((t, x.min(b)));
        }
        t = t.max(y);
    }
    if t < b {
        out.push((t, b));
    }
    out
}

fn minutes(rng: &mut impl Rng, lo: f64, hi: f64) -> i64 {
    (rng.random_range(lo..hi) * MIN as f64).round() as i64
}

/// A point in `region` clear of fast-food outlets, or the clearest of the
/// candidates tried.
fn choose_place(world: &World, region: usize, rng: &mut impl Rng) -> GeoPoint {
    let ff = PoiType::new(FAST_FOOD);
    let mut best = (f64::NEG_INFINITY, world.inner_point(region, PLACE_EDGE_MARGIN_M, rng));
    for _ in 0..500 {
        let p = world.inner_point(region, PLACE_EDGE_MARGIN_M, rng);
        match world.pois.nearest_within(p, PLACE_FF_CLEARANCE_M, Some(&ff)) {
            None => return p,
            Some((_, d)) if d > best.0 => best = (d, p),
            _ => {}
        }
    }
    best.1
}

struct Builder {
    legs: Vec<Leg>,
    at: GeoPoint,
    region: usize,
    t: i64,
}

impl Builder {
    fn dwell(&mut self, until: i64, kind: PlaceKind) {
        if until > self.t {
            self.legs.push(Leg { t0: self.t, t1: until, from: self.at, to: self.at, region: self.region, kind: LegKind::Dwell(kind) });
            self.t = until;
        }
    }

    fn drive(&mut self, to: GeoPoint, region: usize) {
        let secs = (local_dist_m(self.at, to) / VEHICLE_MPS).max(60.0);
        let t1 = self.t + (secs * 1000.0).round() as i64;
        self.legs.push(Leg { t0: self.t, t1, from: self.at, to, region, kind: LegKind::Vehicle });
        self.t = t1;
        self.at = to;
        self.region = region;
    }
}

fn drive_ms(a: GeoPoint, b: GeoPoint) -> i64 {
    ((local_dist_m(a, b) / VEHICLE_MPS).max(60.0) * 1000.0).round() as i64
}

fn walk_ms(a: GeoPoint, b: GeoPoint) -> i64 {
    (local_dist_m(a, b) / WALK_MPS * 1000.0).round() as i64
}

fn leisure_region(world: &World, exclude: &[usize], rng: &mut impl Rng) -> usize {
    let n = world.regions.len();
    let pool: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    if pool.is_empty() {
        rng.random_range(0..n)
    } else {
        pool[rng.random_range(0..pool.len())]
    }
}

/// Legs, wake times, departures and home arrivals for every day.
struct Routine {
    legs: Vec<Leg>,
    wake: Vec<i64>,
    depart: Vec<i64>,
    arrive: Vec<i64>,
}

fn routine(world: &World, home: usize, school: usize, days: usize, window: (i64, i64), start: NaiveDate, rng: &mut impl Rng) -> Routine {
    let home_at = choose_place(world, home, rng);
    let school_at = choose_place(world, school, rng);
    let mut b = Builder { legs: Vec::new(), at: home_at, region: home, t: window.0 };
    let (mut wake, mut depart, mut arrive) = (Vec::new(), Vec::new(), Vec::new());
    for d in 0..days {
        let day0 = window.0 + d as i64 * DAY;
        wake.push(day0 + 6 * HOUR + 30 * MIN + minutes(rng, -15.0, 15.0));
        let weekend = matches!((start + chrono::Duration::days(d as i64)).weekday(), Weekday::Sat | Weekday::Sun);
        let latest = day0 + LATEST_HOME;
        if weekend {
            let leave = day0 + 10 * HOUR + minutes(rng, 0.0, 60.0);
            let region = leisure_region(world, &[home], rng);
            let spot = choose_place(world, region, rng);
            let dur = minutes(rng, 120.0, 240.0);
            b.dwell(leave, PlaceKind::Home);
            depart.push(leave);
            b.drive(spot, region);
            let until = (b.t + dur).min(latest - drive_ms(spot, home_at));
            b.dwell(until, PlaceKind::Leisure);
        } else {
            let leave = day0 + 7 * HOUR + 30 * MIN + minutes(rng, 0.0, 30.0);
            b.dwell(leave, PlaceKind::Home);
            depart.push(leave);
            b.drive(school_at, school);
            b.dwell(day0 + 13 * HOUR + 30 * MIN + minutes(rng, 0.0, 60.0), PlaceKind::School);
            let region = leisure_region(world, &[home, school], rng);
            let spot = choose_place(world, region, rng);
            let dur = minutes(rng, 60.0, 150.0);
            let arrive_spot = b.t + drive_ms(school_at, spot);
            let until = (arrive_spot + dur).min(latest - drive_ms(spot, home_at));
            if until - arrive_spot >= 60 * MIN {
                b.drive(spot, region);
                b.dwell(until, PlaceKind::Leisure);
            }
        }
        b.drive(home_at, home);
        arrive.push(b.t);
    }
    b.dwell(window.1, PlaceKind::Home);
    wake.push(window.1 + 6 * HOUR + 30 * MIN + minutes(rng, -15.0, 15.0));
    Routine { legs: b.legs, wake, depart, arrive }
}

fn sleeps(profile: &BehaviorProfile, r: &Routine, window: (i64, i64), start: NaiveDate, rng: &mut impl Rng) -> Vec<Sleep> {
    let noise = Normal::new(0.0, profile.sleep_sd_h.max(0.0)).expect("finite sd");
    let days = r.arrive.len();
    let mut out = Vec::new();
    for d in 0..=days {
        let hours = (profile.sleep_mean_h + noise.sample(rng)).clamp(7.0, 11.0);
        let date = start + chrono::Duration::days(d as i64);
        let w = r.wake[d];
        if d == 0 {
            out.push(Sleep { t0: window.0, t1: w, date, complete: false });
            continue;
        }
        let s = (w - (hours * HOUR as f64).round() as i64).max(r.arrive[d - 1] + HOUR);
        if d == days {
            if s < window.1 {
                out.push(Sleep { t0: s, t1: window.1, date, complete: false });
            }
        } else {
            out.push(Sleep { t0: s, t1: w, date, complete: true });
        }
    }
    out
}

/// App outages built from home stretches: the time before the first
/// departure, each night from just after a home arrival to just before the
/// next departure, and the time after the last arrival. Stretches are added
/// in random order until the unrecorded time reaches `(1 - compliance)` of
/// the window; the last one is kept with the probability that makes the
/// expected unrecorded time exactly that target. Interior outages always span
/// more than 12 hours, so gap detection never takes them for doze.
fn outages(compliance: f64, r: &Routine, window: (i64, i64), rng: &mut impl Rng) -> Vec<(i64, i64)> {
    let days = r.arrive.len();
    if days == 0 {
        return Vec::new();
    }
    let start = |j: usize| if j == 0 { window.0 } else { r.arrive[j - 1] + MIN };
    let end = |j: usize| if j == days { window.1 } else { r.depart[j] - MIN };
    let target = (1.0 - compliance).clamp(0.0, 1.0) * (window.1 - window.0) as f64;
    let mut order: Vec<usize> = (0..=days).collect();
    order.shuffle(rng);
    let runs = |chosen: &[bool]| -> Vec<(i64, i64)> {
        let mut out = Vec::new();
        let mut j = 0;
        while j < chosen.len() {
            if !chosen[j] {
                j += 1;
                continue;
            }
            let mut k = j;
            while k + 1 < chosen.len() && chosen[k + 1] {
                k += 1;
            }
            out.push((start(j), end(k)));
            j = k + 1;
        }
        out
    };
    let total = |iv: &[(i64, i64)]| iv.iter().map(|(a, b)| (b - a) as f64).sum::<f64>();
    let mut chosen = vec![false; days + 1];
    let mut prev = 0.0;
    for &n in &order {
        chosen[n] = true;
        let now = total(&runs(&chosen));
        if now >= target {
            let keep = (target - prev) / (now - prev);
            if rng.random::<f64>() >= keep {
                chosen[n] = false;
            }
            break;
        }
        prev = now;
    }
    runs(&chosen)
}

/// Consecutive dwells in one region, with the vehicle legs between them.
struct Group {
    region: usize,
    t0: i64,
    t1: i64,
    dwells: Vec<usize>,
}

fn groups(legs: &[Leg]) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for (i, leg) in legs.iter().enumerate() {
        if !leg.is_dwell() {
            continue;
        }
        match out.last_mut() {
            Some(g) if g.region == leg.region && legs[g.dwells[g.dwells.len() - 1] + 1..i].iter().all(|l| l.region == leg.region) => {
                g.t1 = leg.t1;
                g.dwells.push(i);
            }
            _ => out.push(Group { region: leg.region, t0: leg.t0, t1: leg.t1, dwells: vec![i] }),
        }
    }
    out
}

struct Stop {
    leg: usize,
    t_go: i64,
    outlet: GeoPoint,
    walk: i64,
    stay: i64,
}

/// Decides fast-food stops per recorded region stay and splices them into the legs.
fn fast_food_stops(world: &World, profile: &BehaviorProfile, legs: Vec<Leg>, sleeps: &[Sleep], outages: &[(i64, i64)], rng: &mut impl Rng) -> (Vec<Leg>, Vec<StayTruth>, usize) {
    let e = &world.config.effects;
    let asleep: Vec<(i64, i64)> = sleeps.iter().map(|s| (s.t0, s.t1)).collect();
    let mut blocked = asleep.clone();
    blocked.extend_from_slice(outages);
    let mut stops: Vec<Stop> = Vec::new();
    let mut truth = Vec::new();
    let mut skipped = 0;
    for g in groups(&legs) {
        let opportunity = g.t1 - g.t0 >= 10 * MIN && !overlaps((g.t0, g.t1), outages);
        let mut fast_food = false;
        if opportunity {
            let p = match profile.fast_food_propensity {
                q if q >= 1.0 => 1.0,
                q if q <= 0.0 => 0.0,
                q => logistic((q / (1.0 - q)).ln() + e.fastfood_restaurant_density * world.lec(g.region, RESTAURANT_DENSITY) + e.fastfood_income_z * world.income_z(g.region)),
            };
            let u: f64 = rng.random();
            if u < p {
                let window = g
                    .dwells
                    .iter()
                    .flat_map(|&i| subtract(legs[i].t0, legs[i].t1, &blocked).into_iter().map(move |w| (i, w)))
                    .max_by_key(|&(i, (a, b))| (b - a, std::cmp::Reverse(i)));
                let stay = minutes(rng, 15.0, 25.0);
                let pick: f64 = rng.random();
                let place: f64 = rng.random();
                if let Some((i, (a, b))) = window {
                    let at = legs[i].to;
                    let room = b - a - 10 * MIN;
                    let fits: Vec<GeoPoint> = world.fast_food[g.region].iter().copied().filter(|&o| 2 * walk_ms(at, o) + stay <= room).collect();
                    if !fits.is_empty() {
                        let outlet = fits[((pick * fits.len() as f64) as usize).min(fits.len() - 1)];
                        let walk = walk_ms(at, outlet);
                        let slack = room - 2 * walk - stay;
                        let t_go = a + 5 * MIN + (place * slack as f64) as i64;
                        stops.push(Stop { leg: i, t_go, outlet, walk, stay });
                        fast_food = true;
                    }
                }
                if !fast_food {
                    skipped += 1;
                }
            }
        }
        truth.push(StayTruth { region_id: world.regions[g.region].id.clone(), t_start: g.t0, t_end: g.t1, opportunity, fast_food });
    }
    let mut out = Vec::with_capacity(legs.len() + 4 * stops.len());
    let mut s = stops.into_iter().peekable();
    for (i, leg) in legs.into_iter().enumerate() {
        match s.next_if(|st| st.leg == i) {
            None => out.push(leg),
            Some(st) => {
                let LegKind::Dwell(kind) = leg.kind else { unreachable!("stops split dwells") };
                let (p, o, r) = (leg.to, st.outlet, leg.region);
                let t1 = st.t_go + st.walk;
                let t2 = t1 + st.stay;
                let t3 = t2 + st.walk;
                out.push(Leg { t1: st.t_go, ..leg });
                out.push(Leg { t0: st.t_go, t1, from: p, to: o, region: r, kind: LegKind::Walk });
                out.push(Leg { t0: t1, t1: t2, from: o, to: o, region: r, kind: LegKind::Dwell(PlaceKind::FastFood) });
                out.push(Leg { t0: t2, t1: t3, from: o, to: p, region: r, kind: LegKind::Walk });
                out.push(Leg { t0: t3, t1: leg.t1, from: p, to: p, region: r, kind: LegKind::Dwell(kind) });
            }
        }
    }
    (out, truth, skipped)
}

/// Sleep, travel and walking segments plus activity bouts placed in
/// 15-minute slots of recorded awake dwell time.
fn activity(profile: &BehaviorProfile, legs: &[Leg], sleeps: &[Sleep], outages: &[(i64, i64)], window: (i64, i64), days: usize, rng: &mut impl Rng) -> Vec<Segment> {
    let mut segs: Vec<Segment> = sleeps.iter().map(|s| Segment { t0: s.t0, t1: s.t1, act: Act::Sleep }).collect();
    let day_of = |t: i64| ((t - window.0).div_euclid(DAY)).clamp(0, days as i64 - 1) as usize;
    let mut walked = vec![0u64; days];
    for leg in legs {
        match leg.kind {
            LegKind::Vehicle => segs.push(Segment { t0: leg.t0, t1: leg.t1, act: Act::Vehicle }),
            LegKind::Walk => {
                let hz = profile.walking_cadence_hz;
                let cycles = ((leg.t1 - leg.t0) as f64 / 1000.0 * hz).floor() as u64;
                if cycles > 0 {
                    segs.push(Segment { t0: leg.t0, t1: leg.t0 + (cycles as f64 / hz * 1000.0).round() as i64, act: Act::Walk { hz, cycles } });
                    walked[day_of(leg.t0)] += cycles;
                }
            }
            LegKind::Dwell(_) => {}
        }
    }
    let asleep: Vec<(i64, i64)> = sleeps.iter().map(|s| (s.t0, s.t1)).collect();
    let mut blocked = asleep.clone();
    blocked.extend_from_slice(outages);
    let mut slots: Vec<Vec<i64>> = vec![Vec::new(); days];
    let mut awake = vec![0i64; days];
    let mut recorded = vec![0i64; days];
    for leg in legs.iter().filter(|l| matches!(l.kind, LegKind::Dwell(k) if k != PlaceKind::FastFood)) {
        for (a, b) in subtract(leg.t0, leg.t1, &asleep) {
            let mut t = a;
            while t < b {
                let end = (window.0 + (day_of(t) as i64 + 1) * DAY).min(b);
                awake[day_of(t)] += end - t;
                t = end;
            }
        }
        for (a, b) in subtract(leg.t0, leg.t1, &blocked) {
            let mut t = a;
            while t < b {
                let d = day_of(t);
                let end = (window.0 + (d as i64 + 1) * DAY).min(b);
                recorded[d] += end - t;
                let mut s = t;
                while s + SLOT <= end {
                    slots[d].push(s);
                    s += SLOT;
                }
                t = end;
            }
        }
    }
    let day_noise = Normal::new(-0.5 * 0.15f64.powi(2), 0.15).expect("finite sd");
    for d in 0..days {
        let factor: f64 = day_noise.sample(rng).exp();
        let share = if awake[d] > 0 { recorded[d] as f64 / awake[d] as f64 } else { 0.0 };
        let target = 24.0 * profile.base_step_rate * factor * share - walked[d] as f64;
        let mut free = std::mem::take(&mut slots[d]);
        free.shuffle(rng);
        let mut free = free.into_iter();
        let mut steps = 0.0;
        while steps < target {
            let Some(slot) = free.next() else { break };
            let dur_s = rng.random_range(120.0..600.0);
            let run = rng.random::<f64>() < profile.vigorous_share;
            let hz = if run { profile.running_cadence_hz } else { profile.walking_cadence_hz };
            let cycles = ((dur_s * hz).floor()).min((target - steps).ceil()).max(1.0) as u64;
            let len = (cycles as f64 / hz * 1000.0).round() as i64;
            let t0 = slot + rng.random_range(0..=(SLOT - len).max(0));
            let act = if run { Act::Run { hz, cycles } } else { Act::Walk { hz, cycles } };
            segs.push(Segment { t0, t1: t0 + len, act });
            steps += cycles as f64;
        }
        let light = (profile.light_share * recorded[d] as f64 / SLOT as f64).round() as usize;
        for slot in free.take(light) {
            segs.push(Segment { t0: slot, t1: slot + SLOT, act: Act::Light });
        }
    }
    segs.sort_by_key(|s| (s.t0, s.t1));
    debug_assert!(segs.windows(2).all(|w| w[0].t1 <= w[1].t0), "activity segments overlap");
    segs
}

pub(crate) fn build(world: &World, home: usize, profile: &BehaviorProfile, window: (i64, i64), start: NaiveDate, sensors: bool, rng: &mut impl Rng) -> Plan {
    let days = ((window.1 - window.0) / DAY) as usize;
    let school = world.region_index(&profile.school_region_id).unwrap_or(home);
    let r = routine(world, home, school, days, window, start, rng);
    let sleeps = sleeps(profile, &r, window, start, rng);
    let outages = if sensors { outages(profile.compliance, &r, window, rng) } else { Vec::new() };
    let (legs, stays, fast_food_skipped) = fast_food_stops(world, profile, r.legs, &sleeps, &outages, rng);
    let segments = activity(profile, &legs, &sleeps, &outages, window, days, rng);
    Plan { window, start, legs, sleeps, outages, segments, stays, fast_food_skipped, wake: r.wake }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PopulationConfig, WorldConfig};
    use crate::population::generate_population;
    use crate::world::generate_world;
    use crate::stream_rng;

    fn setup(days: i64) -> (World, Vec<BehaviorProfile>, Vec<usize>, (i64, i64), NaiveDate) {
        let w = generate_world(&WorldConfig { seed: 4, n_regions: 36, ..Default::default() }).unwrap();
        let pop = generate_population(&w, &PopulationConfig { n_participants: 40, ..Default::default() }, 4).unwrap();
        let homes = pop.participants.iter().map(|p| w.region_index(&p.home_region_id).unwrap()).collect();
        let start = NaiveDate::from_ymd_opt(2024, 3, 4).unwrap();
        let t0 = start.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp_millis();
        (w, pop.profiles, homes, (t0, t0 + days * DAY), start)
    }

    #[test]
    fn subtract_intervals() {
        assert_eq!(subtract(0, 10, &[(2, 3), (5, 12)]), vec![(0, 2), (3, 5)]);
        assert_eq!(subtract(0, 10, &[]), vec![(0, 10)]);
        assert!(subtract(0, 10, &[(-1, 11)]).is_empty());
    }

    #[test]
    fn legs_tile_the_window_and_places_avoid_outlets() {
        let (w, profiles, homes, window, start) = setup(7);
        let ff = PoiType::new(FAST_FOOD);
        for (i, p) in profiles.iter().enumerate() {
            let plan = build(&w, homes[i], p, window, start, true, &mut stream_rng(1, i as u64 + 10));
            assert_eq!(plan.legs.first().unwrap().t0, window.0);
            assert_eq!(plan.legs.last().unwrap().t1, window.1);
            assert!(plan.legs.windows(2).all(|x| x[0].t1 == x[1].t0 && x[0].to == x[1].from));
            for leg in &plan.legs {
                if let LegKind::Dwell(k) = leg.kind {
                    assert!(w.regions[leg.region].contains(leg.to));
                    let near = w.pois.nearest_within(leg.to, 80.0, Some(&ff));
                    assert_eq!(near.is_some(), k == PlaceKind::FastFood, "{k:?}");
                }
            }
            assert!(plan.segments.windows(2).all(|x| x[0].t1 <= x[1].t0));
        }
    }

    #[test]
    fn outages_are_long_and_expected_share_matches() {
        let (w, profiles, homes, window, start) = setup(14);
        let mut covered = 0.0;
        let mut target = 0.0;
        for rep in 0..3u64 {
            for (i, p) in profiles.iter().enumerate() {
                let plan = build(&w, homes[i], p, window, start, true, &mut stream_rng(rep, i as u64));
                for &(a, b) in plan.outages.iter().filter(|o| o.0 > window.0 && o.1 < window.1) {
                    assert!(b - a > 12 * HOUR, "outage of {} h", (b - a) as f64 / HOUR as f64);
                }
                let lost: i64 = plan.outages.iter().map(|(a, b)| b - a).sum();
                covered += 1.0 - lost as f64 / (window.1 - window.0) as f64;
                target += p.compliance;
            }
        }
        let n = 3.0 * profiles.len() as f64;
        assert!((covered / n - target / n).abs() < 0.03, "{} vs {}", covered / n, target / n);
    }

    #[test]
    fn certain_propensity_stops_at_every_opportunity() {
        let (w, mut profiles, homes, window, start) = setup(5);
        for p in &mut profiles {
            p.fast_food_propensity = 1.0;
        }
        for (i, p) in profiles.iter().enumerate().take(15) {
            let plan = build(&w, homes[i], p, window, start, true, &mut stream_rng(2, i as u64));
            assert_eq!(plan.fast_food_skipped, 0);
            assert!(plan.stays.iter().filter(|s| s.opportunity).all(|s| s.fast_food));
            let stops = plan.legs.iter().filter(|l| l.kind == LegKind::Dwell(PlaceKind::FastFood)).count();
            assert_eq!(stops, plan.stays.iter().filter(|s| s.fast_food).count());
        }
    }
}
