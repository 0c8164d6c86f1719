//! Region-level association analysis between LECs and population
//! indicators, with confounder selection from a causal DAG.

mod dag;
pub mod regression;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

pub use dag::{CausalDag, DagEdge, DagFile, DagNode, NodeKind};
use regression::{irls, logistic, wls, Family};

use crate::aggregation::{is_percentage, PopulationIndicator, Semantics};
use crate::ingest::{BmiCategory, Participant, Sex};
use crate::lec::{LecValue, StatTable};

pub const INTERCEPT: &str = "(intercept)";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid DAG: {0}")]
    InvalidDag(String),
    #[error("not identifiable: {0}")]
    NotIdentifiable(String),
    #[error("singular design: collinear columns {}", .0.join(", "))]
    Singular(Vec<String>),
    #[error("logistic fit failed: {0}")]
    Separation(String),
}

/// One analysis row per region. Suppressed indicator values never enter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub region_id: String,
    pub values: BTreeMap<String, Option<f64>>,
    /// Contributor counts of the indicator columns.
    pub n: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantics: Option<Semantics>,
    pub columns: Vec<String>,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    /// Joins gated population indicators of one semantics with LECs and any
    /// extra region covariates. Columns keep first-appearance order.
    pub fn build(semantics: Semantics, population: &[PopulationIndicator], lecs: &[LecValue], covariates: Option<&StatTable>) -> Result<Self, AnalysisError> {
        let mut columns: Vec<String> = Vec::new();
        let mut rows: BTreeMap<String, DatasetRow> = BTreeMap::new();
        for l in lecs {
            if !columns.contains(&l.name) {
                columns.push(l.name.clone());
            }
            entry(&mut rows, &l.region_id).values.insert(l.name.clone(), l.value);
        }
        if let Some(t) = covariates {
            for c in t.columns.iter().filter(|c| !columns.contains(c)).cloned().collect::<Vec<_>>() {
                for id in t.rows.keys() {
                    let v = t.get(id, &c).map_err(|e| AnalysisError::InvalidArgument(e.to_string()))?;
                    entry(&mut rows, id).values.insert(c.clone(), v);
                }
                columns.push(c);
            }
        }
        let lec_names: BTreeSet<&str> = lecs.iter().map(|l| l.name.as_str()).collect();
        for p in population.iter().filter(|p| p.semantics == semantics) {
            if lec_names.contains(p.name.as_str()) {
                return Err(AnalysisError::InvalidArgument(format!("column `{}` is both an LEC and an indicator", p.name)));
            }
            if !columns.contains(&p.name) {
                columns.push(p.name.clone());
            }
            let r = entry(&mut rows, &p.region_id);
            let v = if p.suppressed { None } else { p.value.filter(|v| v.is_finite()) };
            r.values.insert(p.name.clone(), v);
            if v.is_some() {
                r.n.insert(p.name.clone(), p.n);
            }
        }
        let mut rows: Vec<DatasetRow> = rows.into_values().collect();
        for r in &mut rows {
            for c in &columns {
                r.values.entry(c.clone()).or_insert(None);
            }
        }
        Ok(Dataset { semantics: Some(semantics), columns, rows })
    }

    pub fn has_column(&self, c: &str) -> bool {
        self.columns.iter().any(|x| x == c)
    }

    fn require(&self, c: &str) -> Result<(), AnalysisError> {
        if self.has_column(c) {
            Ok(())
        } else {
            Err(AnalysisError::InvalidArgument(format!("dataset has no column `{c}`")))
        }
    }
}

fn entry<'a>(rows: &'a mut BTreeMap<String, DatasetRow>, id: &str) -> &'a mut DatasetRow {
    rows.entry(id.to_string()).or_insert_with(|| DatasetRow { region_id: id.to_string(), values: BTreeMap::new(), n: BTreeMap::new() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Rows weighted by the outcome's contributor count.
    #[default]
    N,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub region_id: String,
    /// Regressor values in coefficient order, intercept first.
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub outcome: String,
    pub exposure: String,
    pub coefficients: Vec<Coefficient>,
    /// Coefficient covariance, row-major in coefficient order.
    pub covariance: Vec<Vec<f64>>,
    pub adjustment_set: Vec<String>,
    pub covariates: Vec<String>,
    pub n_rows: usize,
    pub df_resid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_squared: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deviance: Option<f64>,
    pub dispersion: f64,
    pub weights: Weighting,
    pub iterations: usize,
    /// Multiplier from the model's response scale to indicator units.
    pub outcome_scale: f64,
    pub exposure_range: (f64, f64),
    pub rows: Vec<DesignRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    fn exposure_index(&self) -> usize {
        self.coefficients.iter().position(|c| c.name == self.exposure).expect("exposure is a coefficient")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit results serialize")
    }
}

struct Design {
    x: DMatrix<f64>,
    y: Vec<f64>,
    n: Vec<f64>,
    names: Vec<String>,
    rows: Vec<DesignRow>,
}

fn design(ds: &Dataset, outcome: &str, exposure: &str, covariates: &[String], need_n: bool) -> Result<Design, AnalysisError> {
    ds.require(outcome)?;
    ds.require(exposure)?;
    let mut names = vec![INTERCEPT.to_string(), exposure.to_string()];
    for c in covariates {
        ds.require(c)?;
        if c == outcome || names.contains(c) {
            return Err(AnalysisError::InvalidArgument(format!("`{c}` appears twice among outcome and regressors")));
        }
        names.push(c.clone());
    }
    let mut xs = Vec::new();
    let (mut y, mut n, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for r in &ds.rows {
        let Some(Some(yv)) = r.values.get(outcome) else { continue };
        let vals: Option<Vec<f64>> = names[1..].iter().map(|c| r.values.get(c).copied().flatten()).collect();
        let Some(vals) = vals else { continue };
        let weight = r.n.get(outcome).copied();
        if need_n && weight.is_none_or(|w| w == 0) {
            continue;
        }
        let mut row = vec![1.0];
        row.extend(vals);
        xs.extend(row.iter().copied());
        y.push(*yv);
        n.push(weight.unwrap_or(1) as f64);
        rows.push(DesignRow { region_id: r.region_id.clone(), x: row });
    }
    let p = names.len();
    if y.len() < p + 2 {
        return Err(AnalysisError::InvalidArgument(format!("{} complete rows; at least {} needed for {} coefficients", y.len(), p + 2, p)));
    }
    Ok(Design { x: DMatrix::from_row_slice(y.len(), p, &xs), y, n, names, rows })
}

fn summarize(names: &[String], beta: &[f64], cov: &DMatrix<f64>, quantile: f64) -> (Vec<Coefficient>, Vec<Vec<f64>>) {
    let coefs = names
        .iter()
        .zip(beta)
        .enumerate()
        .map(|(i, (name, &b))| {
            let se = cov[(i, i)].max(0.0).sqrt();
            Coefficient { name: name.clone(), estimate: b, std_error: se, ci_low: b - quantile * se, ci_high: b + quantile * se }
        })
        .collect();
    let rows = (0..cov.nrows()).map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect()).collect();
    (coefs, rows)
}

fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64).expect("positive df").inverse_cdf(0.975)
}

fn exposure_range(d: &Design) -> (f64, f64) {
    d.rows.iter().map(|r| r.x[1]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Weighted least squares of `outcome` on the exposure and covariates.
pub fn fit_linear(ds: &Dataset, outcome: &str, exposure: &str, covariates: &[String], weights: Weighting) -> Result<FitResult, AnalysisError> {
    let d = design(ds, outcome, exposure, covariates, weights == Weighting::N)?;
    let w: Vec<f64> = match weights {
        Weighting::N => d.n.clone(),
        Weighting::Unit => vec![1.0; d.y.len()],
    };
    let fit = wls(&d.x, &d.y, &w, &d.names)?;
    let (n, p) = d.x.shape();
    let df = n - p;
    let sigma2 = fit.rss / df as f64;
    let cov = &fit.xtwx_inv * sigma2;
    let (coefficients, covariance) = summarize(&d.names, &fit.beta, &cov, t_quantile(df));
    let wsum: f64 = w.iter().sum();
    let ybar = d.y.iter().zip(&w).map(|(y, w)| y * w).sum::<f64>() / wsum;
    let tss: f64 = d.y.iter().zip(&w).map(|(y, w)| w * (y - ybar).powi(2)).sum();
    Ok(FitResult {
        model: ModelKind::Linear,
        outcome: outcome.into(),
        exposure: exposure.into(),
        coefficients,
        covariance,
        adjustment_set: Vec::new(),
        covariates: covariates.to_vec(),
        n_rows: n,
        df_resid: df,
        r_squared: Some(if tss > 0.0 { 1.0 - fit.rss / tss } else { 1.0 }),
        deviance: None,
        dispersion: sigma2,
        weights,
        iterations: 1,
        outcome_scale: 1.0,
        exposure_range: exposure_range(&d),
        rows: d.rows,
        warnings: Vec::new(),
    })
}

/// Binomial-logit fit of a proportion (or percentage, rescaled by
/// `outcome_scale`) with the contributor count as binomial weight. The
/// dispersion is estimated from the Pearson statistic, so the intervals stay
/// honest when the counts are not true trial counts.
pub fn fit_logistic(ds: &Dataset, outcome: &str, exposure: &str, covariates: &[String], outcome_scale: f64) -> Result<FitResult, AnalysisError> {
    if !(outcome_scale > 0.0) {
        return Err(AnalysisError::InvalidArgument("outcome scale must be positive".into()));
    }
    let d = design(ds, outcome, exposure, covariates, true)?;
    let y: Vec<f64> = d.y.iter().map(|v| v / outcome_scale).collect();
    let fit = irls(&d.x, &y, &d.n, Family::Binomial, &d.names)?;
    let (n, p) = d.x.shape();
    let df = n - p;
    let cov = &fit.xtwx_inv * fit.dispersion;
    let (coefficients, covariance) = summarize(&d.names, &fit.beta, &cov, t_quantile(df));
    Ok(FitResult {
        model: ModelKind::Logistic,
        outcome: outcome.into(),
        exposure: exposure.into(),
        coefficients,
        covariance,
        adjustment_set: Vec::new(),
        covariates: covariates.to_vec(),
        n_rows: n,
        df_resid: df,
        r_squared: None,
        deviance: Some(fit.deviance),
        dispersion: fit.dispersion,
        weights: Weighting::N,
        iterations: fit.iterations,
        outcome_scale,
        exposure_range: exposure_range(&d),
        rows: d.rows,
        warnings: Vec::new(),
    })
}

/// Fits `outcome ~ exposure + backdoor set (+ extra)`. Percentage indicators
/// get the logistic model, everything else the linear one.
pub fn associate(dag: &CausalDag, ds: &Dataset, exposure: &str, outcome: &str, extra: &[String]) -> Result<FitResult, AnalysisError> {
    ds.require(exposure)?;
    ds.require(outcome)?;
    if !ds.rows.iter().any(|r| r.values.get(outcome).is_some_and(Option::is_some)) {
        return Err(AnalysisError::InvalidArgument(format!("`{outcome}` has no released value in any region (all suppressed or missing)")));
    }
    let adjustment = dag.backdoor_adjustment_set(exposure, outcome, |c| ds.has_column(c))?;
    let mut covariates = adjustment.clone();
    for c in extra {
        if !covariates.contains(c) {
            covariates.push(c.clone());
        }
    }
    let mut warnings = Vec::new();
    for c in dag.post_exposure(exposure, extra)? {
        warnings.push(format!("`{c}` descends from `{exposure}`; adjusting for it blocks part of the effect"));
    }
    let mut fit = if is_percentage(outcome) { fit_logistic(ds, outcome, exposure, &covariates, 100.0)? } else { fit_linear(ds, outcome, exposure, &covariates, Weighting::N)? };
    fit.adjustment_set = adjustment;
    fit.warnings = warnings;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub region_id: String,
    pub exposure: String,
    pub delta: f64,
    pub baseline: f64,
    pub predicted: f64,
    pub change: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The modified exposure leaves the observed range widened to 1.5 times its width.
    pub extrapolated: bool,
}

/// Change in the fitted indicator of one region when its exposure moves by
/// `delta`, with a delta-method interval.
pub fn predict_intervention(fit: &FitResult, region_id: &str, delta: f64) -> Result<Prediction, AnalysisError> {
    if !delta.is_finite() {
        return Err(AnalysisError::InvalidArgument("delta must be finite".into()));
    }
    let row = fit.rows.iter().find(|r| r.region_id == region_id).ok_or_else(|| AnalysisError::InvalidArgument(format!("region `{region_id}` was not part of the fit")))?;
    let k = fit.exposure_index();
    let beta: Vec<f64> = fit.coefficients.iter().map(|c| c.estimate).collect();
    let x0 = row.x.clone();
    let mut x1 = x0.clone();
    x1[k] += delta;
    let dot = |x: &[f64]| x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    let (baseline, predicted, grad) = match fit.model {
        ModelKind::Linear => {
            let mut g = vec![0.0; beta.len()];
            g[k] = delta;
            (dot(&x0), dot(&x1), g)
        }
        ModelKind::Logistic => {
            let (m0, m1) = (logistic(dot(&x0)), logistic(dot(&x1)));
            let g = x0.iter().zip(&x1).map(|(a, b)| m1 * (1.0 - m1) * b - m0 * (1.0 - m0) * a).collect();
            (m0, m1, g)
        }
    };
    let change = match fit.model {
        ModelKind::Linear => beta[k] * delta,
        ModelKind::Logistic => predicted - baseline,
    };
    let mut var = 0.0;
    for (i, gi) in grad.iter().enumerate() {
        for (j, gj) in grad.iter().enumerate() {
            var += gi * fit.covariance[i][j] * gj;
        }
    }
    let s = fit.outcome_scale;
    let se = var.max(0.0).sqrt() * s;
    let q = if fit.df_resid > 0 { t_quantile(fit.df_resid) } else { Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.975) };
    let (lo, hi) = fit.exposure_range;
    let slack = 0.25 * (hi - lo);
    let new = x1[k];
    Ok(Prediction {
        region_id: region_id.into(),
        exposure: fit.exposure.clone(),
        delta,
        baseline: baseline * s,
        predicted: predicted * s,
        change: change * s,
        std_error: se,
        ci_low: change * s - q * se,
        ci_high: change * s + q * se,
        extrapolated: new < lo - slack || new > hi + slack,
    })
}

/// Census shares per demographic variable and level, e.g. `sex.female`.
pub type CensusMargins = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub variable: String,
    pub level: String,
    pub sample_share: f64,
    pub census_share: Option<f64>,
    pub difference: Option<f64>,
}

pub fn age_band(age: u8) -> &'static str {
    match age {
        0..=11 => "9-11",
        12..=14 => "12-14",
        _ => "15-18",
    }
}

/// Participant demographics against census margins. Reported only; nothing
/// is reweighted.
pub fn balance_table(participants: &[Participant], margins: &CensusMargins) -> Vec<BalanceRow> {
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for p in participants {
        let sex = match p.sex {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Other => "other",
        };
        let bmi = match p.bmi_category {
            BmiCategory::Underweight => "underweight",
            BmiCategory::Normal => "normal",
            BmiCategory::Overweight => "overweight",
            BmiCategory::Obese => "obese",
        };
        for (var, level) in [("sex", sex), ("age_band", age_band(p.age_years)), ("bmi_category", bmi)] {
            *counts.entry((var.into(), level.into())).or_default() += 1;
        }
    }
    let mut keys: BTreeSet<(String, String)> = counts.keys().cloned().collect();
    for (var, levels) in margins {
        keys.extend(levels.keys().map(|l| (var.clone(), l.clone())));
    }
    let total = participants.len().max(1) as f64;
    keys.into_iter()
        .map(|(variable, level)| {
            let sample_share = counts.get(&(variable.clone(), level.clone())).copied().unwrap_or(0) as f64 / total;
            let census_share = margins.get(&variable).and_then(|m| m.get(&level)).copied();
            BalanceRow { difference: census_share.map(|c| sample_share - c), variable, level, sample_share, census_share }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lec::LecMethod;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as RNormal};

    fn dataset(cols: &[(&str, Vec<f64>)], n: usize) -> Dataset {
        let k = cols[0].1.len();
        let rows = (0..k)
            .map(|i| DatasetRow {
                region_id: format!("r{i:03}"),
                values: cols.iter().map(|(c, v)| (c.to_string(), Some(v[i]))).collect(),
                n: cols.iter().map(|(c, _)| (c.to_string(), n)).collect(),
            })
            .collect();
        Dataset { semantics: None, columns: cols.iter().map(|(c, _)| c.to_string()).collect(), rows }
    }

    #[test]
    fn noiseless_line() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 3.0).collect();
        let y = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let f = fit_linear(&dataset(&[("x", x), ("y", y)], 10), "y", "x", &[], Weighting::Unit).unwrap();
        assert!((f.coefficient("x").unwrap().estimate - 2.0).abs() < 1e-9);
        assert!((f.coefficient(INTERCEPT).unwrap().estimate - 1.0).abs() < 1e-9);
        let c = f.coefficient("x").unwrap();
        assert!(c.ci_low <= c.estimate && c.estimate <= c.ci_high);
    }

    #[test]
    fn too_few_rows_and_unknown_columns() {
        let ds = dataset(&[("x", vec![1.0, 2.0, 3.0]), ("y", vec![1.0, 2.0, 4.0])], 10);
        assert!(fit_linear(&ds, "y", "x", &[], Weighting::Unit).is_err());
        assert!(fit_linear(&ds, "y", "nope", &[], Weighting::Unit).is_err());
    }

    #[test]
    fn linear_ci_coverage_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let noise = RNormal::new(0.0, 1.0).unwrap();
        let mut covered = 0;
        for _ in 0..500 {
            let x: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
            let z: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
            let y: Vec<f64> = (0..200).map(|i| 0.7 * x[i] - 1.5 * z[i] + 3.0 + noise.sample(&mut rng)).collect();
            let f = fit_linear(&dataset(&[("x", x), ("z", z), ("y", y)], 1), "y", "x", &["z".into()], Weighting::Unit).unwrap();
            let c = f.coefficient("x").unwrap();
            covered += (c.ci_low <= 0.7 && 0.7 <= c.ci_high) as usize;
        }
        assert!(covered as f64 / 500.0 >= 0.93, "{covered}");
    }

    #[test]
    fn logistic_ci_coverage_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut covered = 0;
        for _ in 0..300 {
            let x: Vec<f64> = (0..150).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| {
                    let p = logistic(0.2 + 0.8 * v);
                    (0..30).filter(|_| rng.random::<f64>() < p).count() as f64 / 30.0 * 100.0
                })
                .collect();
            let f = fit_logistic(&dataset(&[("x", x), ("pct_y", y)], 30), "pct_y", "x", &[], 100.0).unwrap();
            let c = f.coefficient("x").unwrap();
            covered += (c.ci_low <= 0.8 && 0.8 <= c.ci_high) as usize;
        }
        assert!(covered as f64 / 300.0 >= 0.93, "{covered}");
    }

    #[test]
    fn rescaling_a_covariate_leaves_predictions_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..4.0)).collect();
        let z: Vec<f64> = (0..60).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..60).map(|i| x[i] + 2.0 * z[i] + rng.random_range(-0.5..0.5)).collect();
        let base = fit_linear(&dataset(&[("x", x.clone()), ("z", z.clone()), ("y", y.clone())], 5), "y", "x", &["z".into()], Weighting::N).unwrap();
        for s in [0.001, 7.0, 1e4] {
            let zs: Vec<f64> = z.iter().map(|v| v * s).collect();
            let f = fit_linear(&dataset(&[("x", x.clone()), ("z", zs), ("y", y.clone())], 5), "y", "x", &["z".into()], Weighting::N).unwrap();
            assert!((f.coefficient("z").unwrap().estimate * s - base.coefficient("z").unwrap().estimate).abs() < 1e-8);
            assert!((f.coefficient("x").unwrap().estimate - base.coefficient("x").unwrap().estimate).abs() < 1e-8);
            let xs: Vec<f64> = x.iter().map(|v| v * s).collect();
            let g = fit_linear(&dataset(&[("x", xs), ("z", z.clone()), ("y", y.clone())], 5), "y", "x", &["z".into()], Weighting::N).unwrap();
            assert!((g.coefficient("x").unwrap().estimate * s - base.coefficient("x").unwrap().estimate).abs() < 1e-8);
        }
    }

    #[test]
    fn predictions() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = x.iter().map(|v| 2.0 * v + 1.0 + if (*v as i64) % 2 == 0 { 0.01 } else { -0.01 }).collect();
        let f = fit_linear(&dataset(&[("x", x), ("y", y)], 10), "y", "x", &[], Weighting::N).unwrap();
        let zero = predict_intervention(&f, "r003", 0.0).unwrap();
        assert_eq!(zero.change, 0.0);
        let three = predict_intervention(&f, "r003", 3.0).unwrap();
        assert_eq!(three.change, 3.0 * f.coefficient("x").unwrap().estimate);
        assert!(!three.extrapolated);
        assert!(predict_intervention(&f, "r003", 20.0).unwrap().extrapolated);
        assert!(predict_intervention(&f, "nowhere", 1.0).is_err());
    }

    #[test]
    fn logistic_prediction_matches_direct_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..3.0)).collect();
        let z: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..80).map(|i| {
            let p = logistic(-1.0 + 0.6 * x[i] + 0.4 * z[i]);
            (0..25).filter(|_| rng.random::<f64>() < p).count() as f64 * 4.0
        }).collect();
        let ds = dataset(&[("x", x.clone()), ("z", z.clone()), ("pct_y", y)], 25);
        let f = fit_logistic(&ds, "pct_y", "x", &["z".into()], 100.0).unwrap();
        let b: Vec<f64> = f.coefficients.iter().map(|c| c.estimate).collect();
        let p = predict_intervention(&f, "r010", 0.75).unwrap();
        let direct = |xv: f64| 100.0 / (1.0 + (-(b[0] + b[1] * xv + b[2] * z[10])).exp());
        assert!((p.change - (direct(x[10] + 0.75) - direct(x[10]))).abs() < 1e-9);
        assert_eq!(predict_intervention(&f, "r010", 0.0).unwrap().change, 0.0);
    }

    #[test]
    fn associate_uses_backdoor_set_and_warns_on_mediators() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let k = 100;
        let inc: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let rd: Vec<f64> = inc.iter().map(|v| 1.0 + 2.0 * v + rng.random_range(0.0..1.0)).collect();
        let steps: Vec<f64> = (0..k).map(|i| 500.0 - 30.0 * rd[i] + 100.0 * inc[i] + rng.random_range(-5.0..5.0)).collect();
        let ds = dataset(&[("median_income", inc), ("restaurant_density", rd), ("steps_per_hour_mean", steps)], 12);
        let dag = CausalDag::default_dag();
        let f = associate(&dag, &ds, "restaurant_density", "steps_per_hour_mean", &[]).unwrap();
        assert_eq!(f.adjustment_set, vec!["median_income"]);
        assert!(f.warnings.is_empty());
        let c = f.coefficient("restaurant_density").unwrap();
        assert!(c.ci_low < -30.0 && -30.0 < c.ci_high);
        let again = associate(&dag, &ds, "restaurant_density", "steps_per_hour_mean", &[]).unwrap();
        assert_eq!(again.to_json(), f.to_json());
        let mut with_m = ds.clone();
        with_m.columns.push("opportunity".into());
        for (i, r) in with_m.rows.iter_mut().enumerate() {
            r.values.insert("opportunity".into(), Some((i % 7) as f64));
        }
        let w = associate(&dag, &with_m, "restaurant_density", "steps_per_hour_mean", &["opportunity".into()]).unwrap();
        assert_eq!(w.warnings.len(), 1);
        let missing = dataset(&[("restaurant_density", vec![1.0; 5]), ("steps_per_hour_mean", vec![1.0; 5])], 12);
        assert!(matches!(associate(&dag, &missing, "restaurant_density", "steps_per_hour_mean", &[]), Err(AnalysisError::NotIdentifiable(_))));
    }

    #[test]
    fn dataset_build_drops_suppressed_values() {
        let lec = |r: &str, v: f64| LecValue { region_id: r.into(), name: "restaurant_density".into(), value: Some(v), method: LecMethod::GridRadiusAverage, params: BTreeMap::new() };
        let pop = |r: &str, v: f64, n: usize, sup: bool| PopulationIndicator {
            region_id: r.into(),
            name: "pct_fastfood_visits".into(),
            semantics: Semantics::Resources,
            value: if sup { None } else { Some(v) },
            n,
            suppressed: sup,
        };
        let ds = Dataset::build(Semantics::Resources, &[pop("a", 20.0, 12, false), pop("b", 0.0, 3, true)], &[lec("a", 1.0), lec("b", 2.0)], None).unwrap();
        assert_eq!(ds.columns, vec!["restaurant_density", "pct_fastfood_visits"]);
        assert_eq!(ds.rows[1].values["pct_fastfood_visits"], None);
        assert!(ds.rows[1].n.is_empty());
        assert_eq!(ds.rows[0].n["pct_fastfood_visits"], 12);
        let text = serde_json::to_string(&ds).unwrap();
        assert_eq!(serde_json::from_str::<Dataset>(&text).unwrap(), ds);
    }

    #[test]
    fn balance_reports_shares() {
        let p = |age, sex| Participant {
            pid: format!("p{age}"),
            age_years: age,
            sex,
            bmi_category: BmiCategory::Normal,
            home_region_id: "r".into(),
            has_smartwatch: false,
            utc_offset_min: 0,
        };
        let people = vec![p(9, Sex::Female), p(13, Sex::Male), p(16, Sex::Female), p(17, Sex::Female)];
        let margins: CensusMargins = BTreeMap::from([("sex".to_string(), BTreeMap::from([("female".to_string(), 0.5), ("male".to_string(), 0.5)]))]);
        let t = balance_table(&people, &margins);
        let female = t.iter().find(|r| r.variable == "sex" && r.level == "female").unwrap();
        assert_eq!((female.sample_share, female.difference), (0.75, Some(0.25)));
        let band = t.iter().find(|r| r.level == "15-18").unwrap();
        assert_eq!((band.sample_share, band.census_share), (0.5, None));
    }
}
