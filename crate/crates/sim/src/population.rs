//! Participants and their latent behavior profiles.

use geobehave_core::ingest::{BmiCategory, Participant, Sex};
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::PopulationConfig;
use crate::world::{World, SPORTS_FACILITIES};
use crate::{stream_rng, SimError, POPULATION_STREAM};

/// Expected shares of awake time per intensity class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityMix {
    pub sedentary: f64,
    pub light: f64,
    pub moderate: f64,
    pub vigorous: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorProfile {
    pub pid: String,
    /// Steps per recorded hour, night included.
    pub base_step_rate: f64,
    pub activity_mix: ActivityMix,
    /// Per-visit fast-food probability in a region with zero restaurant
    /// density and average income.
    pub fast_food_propensity: f64,
    pub sleep_mean_h: f64,
    pub sleep_sd_h: f64,
    /// Share of the study window the app records.
    pub compliance: f64,
    pub sensorless: bool,
    pub school_region_id: String,
    pub walking_cadence_hz: f64,
    pub running_cadence_hz: f64,
    /// Share of ambulatory time spent running.
    pub vigorous_share: f64,
    /// Share of awake dwell time in light activity.
    pub light_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub participants: Vec<Participant>,
    pub profiles: Vec<BehaviorProfile>,
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn categorical<'a>(levels: Option<&'a std::collections::BTreeMap<String, f64>>, fallback: &'a [&'a str], rng: &mut impl Rng) -> &'a str {
    let u: f64 = rng.random();
    match levels {
        Some(l) if !l.is_empty() => {
            let mut acc = 0.0;
            for (k, v) in l {
                acc += v;
                if u < acc {
                    return k;
                }
            }
            l.keys().next_back().expect("non-empty")
        }
        _ => fallback[((u * fallback.len() as f64) as usize).min(fallback.len() - 1)],
    }
}

fn sex_of(s: &str) -> Sex {
    match s {
        "female" => Sex::Female,
        "male" => Sex::Male,
        _ => Sex::Other,
    }
}

fn bmi_of(s: &str) -> BmiCategory {
    match s {
        "underweight" => BmiCategory::Underweight,
        "overweight" => BmiCategory::Overweight,
        "obese" => BmiCategory::Obese,
        _ => BmiCategory::Normal,
    }
}

/// Draws `cfg.n_participants` participants. Every random quantity is drawn
/// for every participant in a fixed order, so overrides in `cfg` never shift
/// the stream for later participants.
pub fn generate_population(world: &World, cfg: &PopulationConfig, seed: u64) -> Result<Population, SimError> {
    cfg.validate()?;
    if world.regions.is_empty() && cfg.n_participants > 0 {
        return Err(SimError::World("cannot place participants in a world without regions".into()));
    }
    let mut rng = stream_rng(seed, POPULATION_STREAM);
    let compliance = Beta::new(cfg.compliance_alpha, cfg.compliance_beta).map_err(|e| SimError::Config(e.to_string()))?;
    let e = &world.config.effects;
    let margins = &world.config.census_margins;
    let mut participants = Vec::with_capacity(cfg.n_participants);
    let mut profiles = Vec::with_capacity(cfg.n_participants);
    for i in 0..cfg.n_participants {
        let pid = format!("p{:05}", i + 1);
        let age_years: u8 = rng.random_range(9..=18);
        let sex = sex_of(categorical(margins.get("sex"), &["female", "male"], &mut rng));
        let bmi_category = bmi_of(categorical(margins.get("bmi_category"), &["normal"], &mut rng));
        let home = rng.random_range(0..world.regions.len());
        let near = world.nearby(home, cfg.school_max_cells);
        let school_pick = rng.random_range(0..near.len().max(1));
        let school = near.get(school_pick).copied().unwrap_or(home);
        let sensorless = rng.random::<f64>() < cfg.sensorless_rate;
        let watch = rng.random::<f64>() < cfg.smartwatch_rate;
        let c = compliance.sample(&mut rng);
        let (n_steps, n_ff, n_sleep): (f64, f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
        let walking_cadence_hz = rng.random_range(1.6..1.9);
        let running_cadence_hz = rng.random_range(1.9..2.0);
        let vigorous_share = rng.random_range(0.05..0.25);
        let light_share = rng.random_range(0.1..0.3);

        let z = world.income_z(home);
        let rate = cfg.fixed_step_rate.unwrap_or_else(|| {
            (e.steps_intercept + e.steps_sports_facilities * world.lec(home, SPORTS_FACILITIES) + e.steps_income_z * z + e.steps_individual_sd * n_steps).max(0.0)
        });
        let propensity = cfg.fixed_fastfood_propensity.unwrap_or_else(|| logistic(e.fastfood_intercept + e.fastfood_individual_sd * n_ff));
        let sleep_mean_h = (e.sleep_mean_h + e.sleep_individual_sd_h * n_sleep).clamp(7.5, 10.5);

        let awake_h = 24.0 - sleep_mean_h;
        let cadence = (1.0 - vigorous_share) * walking_cadence_hz + vigorous_share * running_cadence_hz;
        let ambulatory = (24.0 * rate / (3600.0 * cadence) / awake_h).min(1.0 - light_share);
        let activity_mix = ActivityMix {
            sedentary: 1.0 - light_share - ambulatory,
            light: light_share,
            moderate: ambulatory * (1.0 - vigorous_share),
            vigorous: ambulatory * vigorous_share,
        };

        participants.push(Participant {
            pid: pid.clone(),
            age_years,
            sex,
            bmi_category,
            home_region_id: world.regions[home].id.clone(),
            has_smartwatch: watch && !sensorless,
            utc_offset_min: 0,
        });
        profiles.push(BehaviorProfile {
            pid,
            base_step_rate: rate,
            activity_mix,
            fast_food_propensity: propensity,
            sleep_mean_h,
            sleep_sd_h: e.sleep_night_sd_h,
            compliance: c,
            sensorless,
            school_region_id: world.regions[school].id.clone(),
            walking_cadence_hz,
            running_cadence_hz,
            vigorous_share,
            light_share,
        });
    }
    Ok(Population { participants, profiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::WorldConfig;
    use crate::world::{generate_world, RESTAURANT_DENSITY};

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    fn world(effects_null: bool) -> World {
        let mut cfg = WorldConfig { seed: 11, n_regions: 100, ..Default::default() };
        if effects_null {
            cfg.effects = cfg.effects.null();
        }
        generate_world(&cfg).unwrap()
    }

    #[test]
    fn demographics_and_sensorless_rate() {
        let w = world(false);
        let pop = generate_population(&w, &PopulationConfig::default(), 3).unwrap();
        assert_eq!(pop.participants.len(), 1000);
        assert!(pop.participants.iter().all(|p| (9..=18).contains(&p.age_years)));
        let sensorless = pop.profiles.iter().filter(|p| p.sensorless).count() as f64 / 1000.0;
        assert!((sensorless - 0.25).abs() <= 0.03, "{sensorless}");
        for (p, b) in pop.participants.iter().zip(&pop.profiles) {
            assert_eq!(p.pid, b.pid);
            assert!(!(b.sensorless && p.has_smartwatch));
            assert!((0.0..=1.0).contains(&b.fast_food_propensity) && (0.0..=1.0).contains(&b.compliance));
            let m = &b.activity_mix;
            assert!((m.sedentary + m.light + m.moderate + m.vigorous - 1.0).abs() < 1e-9);
            assert!(w.region_index(&b.school_region_id).is_some());
        }
        let ages: std::collections::BTreeSet<u8> = pop.participants.iter().map(|p| p.age_years).collect();
        assert_eq!(ages.len(), 10);
    }

    #[test]
    fn null_effects_decouple_profiles_from_lecs() {
        let w = world(true);
        let pop = generate_population(&w, &PopulationConfig::default(), 5).unwrap();
        let home: Vec<usize> = pop.participants.iter().map(|p| w.region_index(&p.home_region_id).unwrap()).collect();
        let rate: Vec<f64> = pop.profiles.iter().map(|p| p.base_step_rate).collect();
        let ff: Vec<f64> = pop.profiles.iter().map(|p| p.fast_food_propensity).collect();
        for lec in [SPORTS_FACILITIES, RESTAURANT_DENSITY, "median_income"] {
            let x: Vec<f64> = home.iter().map(|&h| w.lec(h, lec)).collect();
            assert!(pearson(&x, &rate).abs() < 0.1, "{lec} vs step rate");
            assert!(pearson(&x, &ff).abs() < 0.1, "{lec} vs propensity");
        }
    }

    #[test]
    fn planted_effect_shows_in_profiles() {
        let w = world(false);
        let pop = generate_population(&w, &PopulationConfig::default(), 5).unwrap();
        let x: Vec<f64> = pop.participants.iter().map(|p| w.lec(w.region_index(&p.home_region_id).unwrap(), SPORTS_FACILITIES)).collect();
        let rate: Vec<f64> = pop.profiles.iter().map(|p| p.base_step_rate).collect();
        assert!(pearson(&x, &rate) > 0.1);
    }

    #[test]
    fn overrides_do_not_shift_other_draws() {
        let w = world(false);
        let a = generate_population(&w, &PopulationConfig { n_participants: 50, ..Default::default() }, 9).unwrap();
        let b = generate_population(&w, &PopulationConfig { n_participants: 50, fixed_fastfood_propensity: Some(1.0), ..Default::default() }, 9).unwrap();
        assert_eq!(a.participants, b.participants);
        assert!(b.profiles.iter().all(|p| p.fast_food_propensity == 1.0));
        assert_eq!(a.profiles.iter().map(|p| p.base_step_rate).collect::<Vec<_>>(), b.profiles.iter().map(|p| p.base_step_rate).collect::<Vec<_>>());
    }
}
