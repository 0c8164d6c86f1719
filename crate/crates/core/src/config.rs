//! Pipeline configuration, read from one TOML file. Every section and field
//! is optional and falls back to the defaults of its module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationConfig;
use crate::analysis::CensusMargins;
use crate::base_indicators::ExtractConfig;
use crate::geo::{geohash, PoiHierarchy};
use crate::ingest::GapConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub geohash_precision: usize,
    pub poi_hierarchy: PoiHierarchy,
    pub gaps: GapConfig,
    pub extract: ExtractConfig,
    pub aggregation: AggregationConfig,
    pub analysis: AnalysisConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Census shares used by the balance diagnostic.
    pub census_margins: CensusMargins,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            geohash_precision: 6,
            poi_hierarchy: PoiHierarchy::default(),
            gaps: GapConfig::default(),
            extract: ExtractConfig::default(),
            aggregation: AggregationConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        match path {
            None => Ok(Config::default()),
            Some(p) => Self::from_toml(&std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(1..=geohash::MAX_PRECISION).contains(&self.geohash_precision) {
            return Err(format!("geohash_precision must be in 1..={}", geohash::MAX_PRECISION));
        }
        self.extract.validate()?;
        let a = &self.aggregation;
        if a.k_min == 0 || !(a.min_visit_s >= 0.0) || !(a.min_recorded_hours >= 0.0) || !(a.sedentary_steps_per_hour >= 0.0) {
            return Err("aggregation thresholds must be non-negative and k_min at least 1".into());
        }
        let g = &self.gaps;
        if !(g.acc_gap_factor > 1.0 && g.loc_gap_s > 0.0 && g.loc_period_s > 0.0 && g.max_doze_s > g.loc_gap_s) {
            return Err("gap thresholds must be positive with max_doze_s above loc_gap_s".into());
        }
        for (var, levels) in &self.analysis.census_margins {
            if levels.values().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("census shares of `{var}` must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
