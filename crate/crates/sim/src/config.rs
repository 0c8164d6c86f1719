//! Simulation configuration. One TOML file with `[world]`, `[population]`
//! and `[recording]` sections; anything left out takes the defaults below.

use std::collections::BTreeMap;

use geobehave_core::analysis::CensusMargins;
use geobehave_core::geo::{geohash, FAST_FOOD, RESTAURANT, SPORTS_FACILITY};
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub world: WorldConfig,
    pub population: PopulationConfig,
    pub recording: RecordingConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.world.validate()?;
        self.population.validate()?;
        self.recording.validate()
    }
}

/// Spatial Poisson intensity of one POI type. The log-intensity of a region
/// is `ln(per_km2) + income_slope·z + log_sd·u` with `z` the region's
/// standardized income and `u` standard normal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoiIntensity {
    pub per_km2: f64,
    #[serde(default)]
    pub income_slope: f64,
    #[serde(default)]
    pub log_sd: f64,
    #[serde(default)]
    pub min_per_region: u32,
}

impl PoiIntensity {
    fn new(per_km2: f64, income_slope: f64, log_sd: f64) -> Self {
        PoiIntensity { per_km2, income_slope, log_sd, min_per_region: 0 }
    }
}

/// Planted coefficients. Fast-food log-odds per visit are
/// `logit(propensity) + fastfood_restaurant_density·x + fastfood_income_z·z`
/// with `x` the visited region's restaurant density and `z` its standardized
/// income; the propensity itself is `logistic(fastfood_intercept + N(0, fastfood_individual_sd))`.
/// Step rates (steps per recorded hour) are
/// `steps_intercept + steps_sports_facilities·s + steps_income_z·z + N(0, steps_individual_sd)`
/// over the home region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Effects {
    pub fastfood_intercept: f64,
    pub fastfood_individual_sd: f64,
    pub fastfood_restaurant_density: f64,
    pub fastfood_income_z: f64,
    pub steps_intercept: f64,
    pub steps_individual_sd: f64,
    pub steps_sports_facilities: f64,
    pub steps_income_z: f64,
    pub sleep_mean_h: f64,
    pub sleep_individual_sd_h: f64,
    pub sleep_night_sd_h: f64,
}

impl Default for Effects {
    fn default() -> Self {
        Effects {
            fastfood_intercept: -2.0,
            fastfood_individual_sd: 0.1,
            fastfood_restaurant_density: 0.3,
            fastfood_income_z: -0.3,
            steps_intercept: 430.0,
            steps_individual_sd: 150.0,
            steps_sports_facilities: 20.0,
            steps_income_z: 40.0,
            sleep_mean_h: 9.0,
            sleep_individual_sd_h: 0.5,
            sleep_night_sd_h: 0.5,
        }
    }
}

impl Effects {
    /// All planted LEC coefficients set to zero; intercepts and noise kept.
    pub fn null(&self) -> Self {
        Effects { fastfood_restaurant_density: 0.0, fastfood_income_z: 0.0, steps_sports_facilities: 0.0, steps_income_z: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_regions: usize,
    pub geohash_precision: usize,
    /// South-west corner of the region block, `[lat, lon]`.
    pub origin: [f64; 2],
    pub income_mean: f64,
    pub income_sd: f64,
    /// Keyed by POI type path.
    pub poi: BTreeMap<String, PoiIntensity>,
    pub census_margins: CensusMargins,
    pub effects: Effects,
}

fn margins(pairs: &[(&str, &[(&str, f64)])]) -> CensusMargins {
    pairs.iter().map(|(var, levels)| (var.to_string(), levels.iter().map(|(l, v)| (l.to_string(), *v)).collect())).collect()
}

impl Default for WorldConfig {
    fn default() -> Self {
        let poi = [
            (RESTAURANT, PoiIntensity::new(30.0, 0.4, 0.5)),
            (FAST_FOOD, PoiIntensity { min_per_region: 1, ..PoiIntensity::new(12.0, 0.0, 0.4) }),
            ("food/cafe", PoiIntensity::new(12.0, 0.3, 0.4)),
            (SPORTS_FACILITY, PoiIntensity::new(5.0, 0.3, 0.5)),
            ("recreation/park", PoiIntensity::new(3.0, 0.0, 0.5)),
            ("education/school", PoiIntensity::new(2.0, 0.0, 0.3)),
            ("retail/grocery", PoiIntensity::new(8.0, 0.1, 0.4)),
        ];
        WorldConfig {
            seed: 1,
            n_regions: 100,
            geohash_precision: 6,
            origin: [40.60, 22.90],
            income_mean: 18_000.0,
            income_sd: 5_000.0,
            poi: poi.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            census_margins: margins(&[
                ("sex", &[("female", 0.49), ("male", 0.51)]),
                ("bmi_category", &[("underweight", 0.05), ("normal", 0.62), ("overweight", 0.22), ("obese", 0.11)]),
                ("age_band", &[("9-11", 0.3), ("12-14", 0.3), ("15-18", 0.4)]),
            ]),
            effects: Effects::default(),
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(1..=geohash::MAX_PRECISION).contains(&self.geohash_precision) {
            return Err(SimError::Config(format!("geohash_precision must be in 1..={}", geohash::MAX_PRECISION)));
        }
        if !(-80.0..=80.0).contains(&self.origin[0]) || !(-180.0..180.0).contains(&self.origin[1]) {
            return Err(SimError::Config("origin must be [lat, lon] within ±80° latitude".into()));
        }
        if !(self.income_sd >= 0.0 && self.income_mean.is_finite()) {
            return Err(SimError::Config("income_sd must be non-negative".into()));
        }
        for (path, p) in &self.poi {
            if !(p.per_km2 >= 0.0 && p.log_sd >= 0.0 && p.income_slope.is_finite()) {
                return Err(SimError::Config(format!("POI intensity of `{path}` must be non-negative")));
            }
        }
        for (var, levels) in &self.census_margins {
            let total: f64 = levels.values().sum();
            if levels.values().any(|v| !(0.0..=1.0).contains(v)) || (total - 1.0).abs() > 1e-6 {
                return Err(SimError::Config(format!("census shares of `{var}` must be in [0, 1] and sum to 1")));
            }
        }
        let e = &self.effects;
        if e.fastfood_individual_sd < 0.0 || e.steps_individual_sd < 0.0 || e.sleep_individual_sd_h < 0.0 || e.sleep_night_sd_h < 0.0 {
            return Err(SimError::Config("effect noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_participants: usize,
    /// Share of registered users who never provide sensor data.
    pub sensorless_rate: f64,
    pub smartwatch_rate: f64,
    /// Beta shape of the per-participant compliance (share of the study
    /// window the app records).
    pub compliance_alpha: f64,
    pub compliance_beta: f64,
    /// Schools lie within this many grid cells of home (Chebyshev distance).
    pub school_max_cells: usize,
    /// If set, every participant gets this fast-food propensity.
    pub fixed_fastfood_propensity: Option<f64>,
    /// If set, every participant gets this step rate.
    pub fixed_step_rate: Option<f64>,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_participants: 1000,
            sensorless_rate: 0.25,
            smartwatch_rate: 0.5,
            compliance_alpha: 6.8,
            compliance_beta: 3.2,
            school_max_cells: 2,
            fixed_fastfood_propensity: None,
            fixed_step_rate: None,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.sensorless_rate) || !unit(self.smartwatch_rate) {
            return Err(SimError::Config("sensorless_rate and smartwatch_rate must be in [0, 1]".into()));
        }
        if !(self.compliance_alpha > 0.0 && self.compliance_beta > 0.0) {
            return Err(SimError::Config("compliance Beta shapes must be positive".into()));
        }
        if self.fixed_fastfood_propensity.is_some_and(|p| !unit(p)) {
            return Err(SimError::Config("fixed_fastfood_propensity must be in [0, 1]".into()));
        }
        if self.fixed_step_rate.is_some_and(|r| !(r >= 0.0)) {
            return Err(SimError::Config("fixed_step_rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecordingConfig {
    pub days: u32,
    /// First study day, `YYYY-MM-DD`; the window starts at its UTC midnight.
    pub start_date: String,
    /// Per-device accelerometer rate range in Hz.
    pub acc_hz: [f64; 2],
    /// Without it only location and self-reports are emitted.
    pub accelerometer: bool,
    pub gps_noise_m: f64,
    pub loc_period_s: u32,
}

impl Default for RecordingConfig {
    fn default() -> Self {
        RecordingConfig { days: 14, start_date: "2024-03-04".into(), acc_hz: [5.0, 15.0], accelerometer: true, gps_noise_m: 3.0, loc_period_s: 60 }
    }
}

impl RecordingConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.start().map_err(SimError::Config)?;
        if self.days == 0 {
            return Err(SimError::Config("days must be at least 1".into()));
        }
        if !(self.acc_hz[0] >= 1.0 && self.acc_hz[0] <= self.acc_hz[1] && self.acc_hz[1] <= 200.0) {
            return Err(SimError::Config("acc_hz must be an increasing range within [1, 200]".into()));
        }
        if !(0.0..=20.0).contains(&self.gps_noise_m) || self.loc_period_s == 0 || self.loc_period_s > 120 {
            return Err(SimError::Config("gps_noise_m must be in [0, 20] and loc_period_s in 1..=120".into()));
        }
        Ok(())
    }

    pub fn start(&self) -> Result<chrono::NaiveDate, String> {
        chrono::NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d").map_err(|e| format!("start_date `{}`: {e}", self.start_date))
    }

    /// Study window in epoch milliseconds.
    pub fn window(&self) -> (i64, i64) {
        let start = self.start().expect("validated").and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis();
        (start, start + self.days as i64 * 86_400_000)
    }
}
