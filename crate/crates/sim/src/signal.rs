//! Sensor streams rendered from a plan.

use geobehave_core::geo::{GeoPoint, METERS_PER_DEG_LAT, meters_per_deg_lon};
use geobehave_core::ingest::{AccSample, LocSample};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::plan::{Act, Leg, Segment};

pub(crate) const GRAVITY: f64 = 9.80665;
const WALK_AMPLITUDE: f64 = 3.0;
const RUN_AMPLITUDE: f64 = 7.5;
const LIGHT_AMPLITUDE: f64 = 0.5;
const LIGHT_HZ: f64 = 0.8;
const MOVING_NOISE: f64 = 0.05;
const SEDENTARY_NOISE: f64 = 0.02;
const SLEEP_NOISE: f64 = 0.002;

/// Fixed gravity direction of a worn or carried device.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Orientation {
    ux: f64,
    uy: f64,
    uz: f64,
}

impl Orientation {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let ux = rng.random_range(-0.3..0.3);
        let uy = rng.random_range(-0.3..0.3);
        Orientation { ux, uy, uz: (1.0 - ux * ux - uy * uy).sqrt() }
    }
}

/// Nearest integer, halves away from zero. A cast instead of `f64::round`,
/// which is a library call on baseline x86-64 and dominated generation time.
fn round_i(x: f64) -> i64 {
    (x + 0.5f64.copysign(x)) as i64
}

fn round4(v: f64) -> f64 {
    round_i(v * 1e4) as f64 / 1e4
}

/// Sorted, merged copy of `iv`.
pub(crate) fn merge(mut iv: Vec<(i64, i64)>) -> Vec<(i64, i64)> {
    iv.retain(|(a, b)| b > a);
    iv.sort_unstable();
    let mut out: Vec<(i64, i64)> = Vec::with_capacity(iv.len());
    for (a, b) in iv {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Accelerometer samples at `hz` over `window`, skipping the merged `off`
/// intervals. Sample `k` falls at `window.0 + round(k * 1000 / hz)`.
pub(crate) fn accelerometer(segments: &[Segment], off: &[(i64, i64)], window: (i64, i64), hz: f64, o: Orientation, rng: &mut impl Rng) -> Vec<AccSample> {
    let period = 1000.0 / hz;
    let expected = ((window.1 - window.0) as f64 / period) as usize;
    let mut out = Vec::with_capacity(expected.saturating_sub(off.iter().map(|(a, b)| ((b - a) as f64 / period) as usize).sum()) + 1);
    let (mut seg, mut gap) = (0usize, 0usize);
    let mut k: i64 = 0;
    loop {
        let t = window.0 + round_i(k as f64 * period);
        if t >= window.1 {
            break;
        }
        while gap < off.len() && off[gap].1 <= t {
            gap += 1;
        }
        if gap < off.len() && off[gap].0 <= t {
            k = (((off[gap].1 - window.0) as f64) / period).ceil() as i64;
            while window.0 + round_i(k as f64 * period) < off[gap].1 {
                k += 1;
            }
            continue;
        }
        while seg < segments.len() && segments[seg].t1 <= t {
            seg += 1;
        }
        let active = segments.get(seg).filter(|s| s.t0 <= t);
        let (signal, sd) = match active.map(|s| (s.act, (t - s.t0) as f64 / 1000.0)) {
            Some((Act::Walk { hz, .. }, tau)) => (WALK_AMPLITUDE * (std::f64::consts::TAU * hz * tau).sin(), MOVING_NOISE),
            Some((Act::Run { hz, .. }, tau)) => (RUN_AMPLITUDE * (std::f64::consts::TAU * hz * tau).sin(), MOVING_NOISE),
            Some((Act::Light, tau)) => (LIGHT_AMPLITUDE * (std::f64::consts::TAU * LIGHT_HZ * tau).sin(), MOVING_NOISE),
            Some((Act::Vehicle, _)) => (0.0, MOVING_NOISE),
            Some((Act::Sleep, _)) => (0.0, SLEEP_NOISE),
            None => (0.0, SEDENTARY_NOISE),
        };
        let n: f64 = rng.sample(StandardNormal);
        let m = GRAVITY + signal + sd * n;
        out.push(AccSample { t, x: round4(o.ux * m), y: round4(o.uy * m), z: round4(o.uz * m) });
        k += 1;
    }
    out
}

/// Location fixes every `period_ms` on the window grid outside `off`, with
/// Gaussian noise of `noise_m` per axis clipped at 3.4 sd.
pub(crate) fn locations(legs: &[Leg], off: &[(i64, i64)], window: (i64, i64), period_ms: i64, noise_m: f64, rng: &mut impl Rng) -> Vec<LocSample> {
    let mut out = Vec::new();
    let (mut leg, mut gap) = (0usize, 0usize);
    let accuracy = Some((2.0 * noise_m).max(1.0));
    let mut t = window.0;
    while t < window.1 {
        while gap < off.len() && off[gap].1 <= t {
            gap += 1;
        }
        let skip = gap < off.len() && off[gap].0 <= t;
        let (nx, ny): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if !skip {
            while leg + 1 < legs.len() && legs[leg].t1 <= t {
                leg += 1;
            }
            let p = legs[leg].position(t);
            let dn = (nx.clamp(-3.4, 3.4)) * noise_m;
            let de = (ny.clamp(-3.4, 3.4)) * noise_m;
            let lat = ((p.lat + dn / METERS_PER_DEG_LAT) * 1e7).round() / 1e7;
            let lon = ((p.lon + de / meters_per_deg_lon(p.lat)) * 1e7).round() / 1e7;
            out.push(LocSample { t, point: GeoPoint { lat, lon }, accuracy_m: accuracy });
        }
        t += period_ms;
    }
    out
}
