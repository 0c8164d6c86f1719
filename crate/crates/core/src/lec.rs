//! Local environment conditions per region, computed from POI data and
//! official-statistics tables. Nothing here reads participant data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::{grid_points, GeoError, PoiIndex, PoiType, Region};

#[derive(Debug, Error)]
pub enum LecError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate region {0}: no grid points")]
    DegenerateRegion(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("stat table: {0}")]
    Table(String),
    #[error("registry: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LecMethod {
    GridRadiusAverage,
    RegionCount,
    StatTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LecValue {
    pub region_id: String,
    pub name: String,
    /// `None` marks an explicitly missing value.
    pub value: Option<f64>,
    pub method: LecMethod,
    pub params: BTreeMap<String, Value>,
}

/// Numeric columns keyed by `region_id`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StatTable {
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, Vec<Option<f64>>>,
}

impl StatTable {
    /// Reads a delimited table with a header row containing `region_id`.
    /// Empty cells and `NA` are missing.
    pub fn from_reader(r: impl std::io::Read) -> Result<Self, LecError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers().map_err(|e| LecError::Table(e.to_string()))?.clone();
        let key = header.iter().position(|h| h == "region_id").ok_or_else(|| LecError::Table("header lacks `region_id`".into()))?;
        let columns: Vec<String> = header.iter().enumerate().filter(|(i, _)| *i != key).map(|(_, h)| h.to_string()).collect();
        let mut rows = BTreeMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| LecError::Table(e.to_string()))?;
            let id = rec.get(key).unwrap_or_default().to_string();
            let mut vals = Vec::with_capacity(columns.len());
            for (i, cell) in rec.iter().enumerate().filter(|(i, _)| *i != key) {
                vals.push(match cell {
                    "" | "NA" => None,
                    s => Some(s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| LecError::Table(format!("row {}: column {}: `{s}` is not a number", line + 2, header.get(i).unwrap_or("?"))))?),
                });
            }
            if rows.insert(id.clone(), vals).is_some() {
                return Err(LecError::Table(format!("duplicate row for region `{id}`")));
            }
        }
        Ok(StatTable { columns, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self, LecError> {
        let f = std::fs::File::open(path).map_err(|e| LecError::Table(format!("{}: {e}", path.display())))?;
        Self::from_reader(f)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["region_id".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (id, vals) in &self.rows {
            let mut rec = vec![id.clone()];
            rec.extend(vals.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
    }

    pub fn get(&self, region_id: &str, column: &str) -> Result<Option<f64>, LecError> {
        let c = self.columns.iter().position(|h| h == column).ok_or_else(|| LecError::InvalidArgument(format!("unknown column `{column}`")))?;
        Ok(self.rows.get(region_id).and_then(|r| r[c]))
    }
}

/// Mean number of POIs under `filter` within `radius_m` of each point of a
/// `spacing_m` grid over the region.
pub fn avg_poi_density(region: &Region, idx: &PoiIndex, filter: &PoiType, spacing_m: f64, radius_m: f64) -> Result<LecValue, LecError> {
    let grid = grid_points(region, spacing_m)?;
    if grid.is_empty() {
        return Err(LecError::DegenerateRegion(region.id.clone()));
    }
    let total: usize = grid.iter().map(|p| idx.within_radius(*p, radius_m, Some(filter)).len()).sum();
    Ok(LecValue {
        region_id: region.id.clone(),
        name: "avg_poi_density".into(),
        value: Some(total as f64 / grid.len() as f64),
        method: LecMethod::GridRadiusAverage,
        params: BTreeMap::from([("poi_filter".into(), json!(filter.as_str())), ("spacing_m".into(), json!(spacing_m)), ("radius_m".into(), json!(radius_m))]),
    })
}

/// Number of POIs under `filter` located inside the region.
pub fn count_pois_in_region(region: &Region, idx: &PoiIndex, filter: &PoiType) -> LecValue {
    let n = idx.iter().filter(|p| p.poi_type.is_under(filter) && region.contains(p.location)).count();
    LecValue {
        region_id: region.id.clone(),
        name: "count_pois_in_region".into(),
        value: Some(n as f64),
        method: LecMethod::RegionCount,
        params: BTreeMap::from([("poi_filter".into(), json!(filter.as_str()))]),
    }
}

pub fn lec_from_stat_table(region: &Region, table: &StatTable, column: &str) -> Result<LecValue, LecError> {
    Ok(LecValue {
        region_id: region.id.clone(),
        name: column.to_string(),
        value: table.get(&region.id, column)?,
        method: LecMethod::StatTable,
        params: BTreeMap::from([("column".into(), json!(column))]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LecSpec {
    pub name: String,
    pub method: LecMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poi_filter: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

impl LecSpec {
    fn require<T: Clone>(&self, v: &Option<T>, field: &str) -> Result<T, LecError> {
        v.clone().ok_or_else(|| LecError::Registry(format!("spec `{}` lacks `{field}`", self.name)))
    }

    pub fn validate(&self) -> Result<(), LecError> {
        match self.method {
            LecMethod::GridRadiusAverage => {
                self.require(&self.poi_filter, "poi_filter")?;
                let (s, r) = (self.require(&self.spacing_m, "spacing_m")?, self.require(&self.radius_m, "radius_m")?);
                if !(s > 0.0 && r >= 0.0) {
                    return Err(LecError::Registry(format!("spec `{}` needs spacing_m > 0 and radius_m >= 0", self.name)));
                }
            }
            LecMethod::RegionCount => {
                self.require(&self.poi_filter, "poi_filter")?;
            }
            LecMethod::StatTable => {
                self.require(&self.column, "column")?;
            }
        }
        Ok(())
    }

    pub fn compute(&self, region: &Region, idx: &PoiIndex, table: Option<&StatTable>) -> Result<LecValue, LecError> {
        self.validate()?;
        let mut v = match self.method {
            LecMethod::GridRadiusAverage => avg_poi_density(
                region,
                idx,
                &PoiType::new(self.require(&self.poi_filter, "poi_filter")?),
                self.require(&self.spacing_m, "spacing_m")?,
                self.require(&self.radius_m, "radius_m")?,
            )?,
            LecMethod::RegionCount => count_pois_in_region(region, idx, &PoiType::new(self.require(&self.poi_filter, "poi_filter")?)),
            LecMethod::StatTable => {
                let t = table.ok_or_else(|| LecError::InvalidArgument(format!("spec `{}` needs a stat table", self.name)))?;
                lec_from_stat_table(region, t, &self.require(&self.column, "column")?)?
            }
        };
        v.name = self.name.clone();
        Ok(v)
    }
}

/// Named LEC specifications, loaded from `[[lec]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LecRegistry {
    #[serde(default, rename = "lec")]
    pub specs: Vec<LecSpec>,
}

impl LecRegistry {
    pub fn from_toml(text: &str) -> Result<Self, LecError> {
        let reg: LecRegistry = toml::from_str(text).map_err(|e| LecError::Registry(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for s in &reg.specs {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(LecError::Registry(format!("duplicate spec name `{}`", s.name)));
            }
        }
        Ok(reg)
    }

    /// Restaurant density, sports facilities and median income.
    pub fn default_registry() -> Self {
        LecRegistry {
            specs: vec![
                LecSpec { name: "restaurant_density".into(), method: LecMethod::GridRadiusAverage, poi_filter: Some("food".into()), spacing_m: Some(30.0), radius_m: Some(100.0), column: None },
                LecSpec { name: "sports_facilities".into(), method: LecMethod::RegionCount, poi_filter: Some(crate::geo::SPORTS_FACILITY.into()), spacing_m: None, radius_m: None, column: None },
                LecSpec { name: "median_income".into(), method: LecMethod::StatTable, poi_filter: None, spacing_m: None, radius_m: None, column: Some("median_income".into()) },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LecFailure {
    pub region_id: String,
    pub spec: String,
    pub error: String,
}

/// Region × spec matrix in region order then registry order. Failed cells
/// are reported separately; the rest is still returned.
pub fn compute_all_lecs(registry: &LecRegistry, regions: &[Region], idx: &PoiIndex, table: Option<&StatTable>) -> (Vec<LecValue>, Vec<LecFailure>) {
    let mut values = Vec::new();
    let mut failures = Vec::new();
    for r in regions {
        for s in &registry.specs {
            match s.compute(r, idx, table) {
                Ok(v) => values.push(v),
                Err(e) => failures.push(LecFailure { region_id: r.id.clone(), spec: s.name.clone(), error: e.to_string() }),
            }
        }
    }
    (values, failures)
}
