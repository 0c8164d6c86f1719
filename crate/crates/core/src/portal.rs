//! Portal service layer: read-only snapshots of published artifacts and a
//! transport-independent router. Raw samples never enter a snapshot.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::aggregation::{individual_summary, registered_indicators, AggregationConfig, Aggregator, ParticipantData, Period, PopulationIndicator, RegionVisit, Semantics};
use crate::analysis::{associate, predict_intervention, CausalDag, Dataset, FitResult};
use crate::geo::{BBox, Region, RegionKind};
use crate::ingest::{IngestError, Store};
use crate::lec::{LecValue, StatTable};

/// Names of the artifacts other commands publish into a store.
pub mod artifacts {
    pub const REGIONS: &str = "regions.json";
    pub const LECS: &str = "lecs.json";
    pub const STAT_TABLE: &str = "stat_table.csv";
    pub const DAG: &str = "dag.json";
    pub const AGGREGATION: &str = "aggregation.json";
    pub const POPULATION: &str = "population.json";
    /// Document collection of region visits keyed by pid.
    pub const VISITS: &str = "region_visits";
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Store(#[from] IngestError),
    #[error("artifact {0}: {1}")]
    Artifact(&'static str, String),
}

/// Immutable view served to requests.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub regions: Vec<Region>,
    pub data: Vec<ParticipantData>,
    pub lecs: Vec<LecValue>,
    pub covariates: Option<StatTable>,
    pub dag: CausalDag,
    pub aggregation: AggregationConfig,
}

impl Snapshot {
    pub fn empty() -> Self {
        Snapshot { regions: Vec::new(), data: Vec::new(), lecs: Vec::new(), covariates: None, dag: CausalDag::default_dag(), aggregation: AggregationConfig::default() }
    }

    /// Reads everything published into `store`. Missing artifacts yield empty
    /// parts; `k_min` overrides the published aggregation setting.
    pub fn load(store: &Store, k_min: Option<usize>) -> Result<Self, SnapshotError> {
        fn json<T: for<'de> Deserialize<'de>>(store: &Store, name: &'static str) -> Result<Option<T>, SnapshotError> {
            match store.published(name)? {
                None => Ok(None),
                Some(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| SnapshotError::Artifact(name, e.to_string())),
            }
        }
        let regions: Vec<Region> = json(store, artifacts::REGIONS)?.unwrap_or_default();
        let lecs: Vec<LecValue> = json(store, artifacts::LECS)?.unwrap_or_default();
        let mut aggregation: AggregationConfig = json(store, artifacts::AGGREGATION)?.unwrap_or_default();
        if let Some(k) = k_min {
            aggregation.k_min = k;
        }
        let dag = match store.published(artifacts::DAG)? {
            None => CausalDag::default_dag(),
            Some(b) => CausalDag::from_json(&String::from_utf8_lossy(&b)).map_err(|e| SnapshotError::Artifact(artifacts::DAG, e.to_string()))?,
        };
        let covariates = match store.published(artifacts::STAT_TABLE)? {
            None => None,
            Some(b) => Some(StatTable::from_reader(b.as_slice()).map_err(|e| SnapshotError::Artifact(artifacts::STAT_TABLE, e.to_string()))?),
        };
        let mut visits: BTreeMap<String, Vec<RegionVisit>> = store.docs.load(artifacts::VISITS)?;
        let mut data = Vec::new();
        for participant in store.participants()? {
            let base = store.load_base(&participant.pid)?.unwrap_or_else(|| crate::base_indicators::BaseIndicators { pid: participant.pid.clone(), ..Default::default() });
            let visits = visits.remove(&participant.pid).unwrap_or_default();
            data.push(ParticipantData { participant, base, visits });
        }
        Ok(Snapshot { regions, data, lecs, covariates, dag, aggregation })
    }

    pub fn region(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Gated indicators of every region under one semantics.
    pub fn population(&self, semantics: Semantics, period: Period) -> Vec<PopulationIndicator> {
        let agg = Aggregator::new(&self.data, self.aggregation.clone());
        let mut out = Vec::new();
        for r in &self.regions {
            for (name, s) in registered_indicators().into_iter().filter(|(_, s)| *s == semantics) {
                out.push(agg.aggregate(name, s, r, period).expect("registered indicator"));
            }
        }
        out
    }

    /// Analysis rows from gate-passing indicators, LECs and region covariates.
    pub fn dataset(&self, semantics: Semantics, period: Period) -> Result<Dataset, crate::analysis::AnalysisError> {
        Dataset::build(semantics, &self.population(semantics, period), &self.lecs, self.covariates.as_ref())
    }
}

/// Semantics under which an indicator is analyzed when none is requested:
/// the first one it is registered under.
pub fn default_semantics(indicator: &str) -> Option<Semantics> {
    registered_indicators().into_iter().find(|(n, _)| *n == indicator).map(|(_, s)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    PublicHealth,
    Clinician,
    Community,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub kind: RoleKind,
    /// Only meaningful for clinicians.
    #[serde(default)]
    pub patients: BTreeSet<String>,
}

impl Role {
    pub fn may_see(&self, pid: &str) -> bool {
        self.kind == RoleKind::Clinician && self.patients.contains(pid)
    }
}

/// Static token-to-role mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Roles {
    #[serde(default)]
    pub tokens: BTreeMap<String, Role>,
}

impl Roles {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn role(&self, token: Option<&str>) -> Option<&Role> {
        token.and_then(|t| self.tokens.get(t))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Forbidden,
    Suppressed,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into() }
    }

    pub fn status(&self) -> u16 {
        match self.code {
            ErrorCode::NotFound => 404,
            ErrorCode::Forbidden => 403,
            ErrorCode::Suppressed => 451,
            ErrorCode::Invalid => 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub query: BTreeMap<String, String>,
    pub body: Option<Value>,
    pub token: Option<String>,
}

impl ApiRequest {
    pub fn get(path: &str) -> Self {
        ApiRequest { method: Method::Get, path: path.into(), query: BTreeMap::new(), body: None, token: None }
    }

    pub fn post(path: &str, body: Value) -> Self {
        ApiRequest { method: Method::Post, path: path.into(), query: BTreeMap::new(), body: Some(body), token: None }
    }

    pub fn with_query(mut self, k: &str, v: &str) -> Self {
        self.query.insert(k.into(), v.into());
        self
    }

    pub fn with_token(mut self, t: &str) -> Self {
        self.token = Some(t.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

/// Canonical text of a response body or CLI result. Both sides print through
/// this so equal results are equal bytes.
pub fn render<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("response serializes");
    let mut s = serde_json::to_string_pretty(&value).expect("response serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Serialize)]
struct RegionSummary {
    id: String,
    kind: RegionKind,
    bbox: BBox,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssociateQuery {
    pub exposure: String,
    pub outcome: String,
    #[serde(default)]
    pub semantics: Option<Semantics>,
    #[serde(default)]
    pub period: Option<String>,
    #[serde(default)]
    pub covariates: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictQuery {
    #[serde(default)]
    fit: Option<FitResult>,
    #[serde(default)]
    query: Option<AssociateQuery>,
    region: String,
    delta: BTreeMap<String, f64>,
}

pub struct Portal {
    snapshot: RwLock<Arc<Snapshot>>,
    roles: Roles,
}

type Handled = Result<Value, ApiError>;

impl Portal {
    pub fn new(snapshot: Snapshot, roles: Roles) -> Self {
        Portal { snapshot: RwLock::new(Arc::new(snapshot)), roles }
    }

    /// Current snapshot; a request holds it for its whole lifetime.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    /// Swaps in a new snapshot. Requests in flight keep the old one.
    pub fn publish(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        let snap = self.snapshot();
        match self.route(&snap, req) {
            Ok(body) => ApiResponse { status: 200, body },
            Err(e) => ApiResponse { status: e.status(), body: serde_json::to_value(&e).expect("error serializes") },
        }
    }

    fn route(&self, snap: &Snapshot, req: &ApiRequest) -> Handled {
        let parts: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let role = self.roles.role(req.token.as_deref());
        match (req.method, parts.as_slice()) {
            (Method::Get, ["config"]) => Ok(config_body(snap)),
            (Method::Get, ["regions"]) => Ok(regions_body(snap)),
            (Method::Get, ["regions", id, "indicators"]) => indicators_body(snap, id, &req.query),
            (Method::Get, ["regions", id, "lecs"]) => {
                snap.region(id).ok_or_else(|| not_found_region(id))?;
                let lecs: Vec<&LecValue> = snap.lecs.iter().filter(|l| l.region_id == *id).collect();
                Ok(serde_json::to_value(lecs).expect("lecs serialize"))
            }
            (Method::Get, ["participants", pid, "indicators"]) => {
                // Authorization first, so unknown pids are indistinguishable from others' patients.
                if !role.is_some_and(|r| r.may_see(pid)) {
                    return Err(ApiError::new(ErrorCode::Forbidden, "individual indicators are restricted to the participant's clinician"));
                }
                let d = snap.data.iter().find(|d| d.participant.pid == *pid).ok_or_else(|| ApiError::new(ErrorCode::NotFound, format!("unknown participant `{pid}`")))?;
                let period = period_param(req.query.get("period"))?;
                Ok(serde_json::to_value(individual_summary(&d.participant, &d.base, period)).expect("indicators serialize"))
            }
            (Method::Post, ["analysis", "associate"]) => {
                let q: AssociateQuery = body(req)?;
                Ok(serde_json::to_value(run_associate(snap, &q)?).expect("fit serializes"))
            }
            (Method::Post, ["analysis", "predict"]) => {
                let q: PredictQuery = body(req)?;
                let fit = match (q.fit, q.query) {
                    (Some(f), None) => f,
                    (None, Some(a)) => run_associate(snap, &a)?,
                    _ => return Err(invalid("give exactly one of `fit` or `query`")),
                };
                let (name, delta) = single_delta(&q.delta)?;
                if name != fit.exposure {
                    return Err(invalid(format!("delta names `{name}` but the fit's exposure is `{}`", fit.exposure)));
                }
                let p = predict_intervention(&fit, &q.region, delta).map_err(|e| invalid(e.to_string()))?;
                Ok(serde_json::to_value(p).expect("prediction serializes"))
            }
            (_, ["config" | "regions" | "analysis" | "participants", ..]) => Err(ApiError::new(ErrorCode::Invalid, format!("unsupported method for {}", req.path))),
            _ => Err(ApiError::new(ErrorCode::NotFound, format!("no route {}", req.path))),
        }
    }
}

fn invalid(msg: impl Into<String>) -> ApiError {
    ApiError::new(ErrorCode::Invalid, msg)
}

fn not_found_region(id: &str) -> ApiError {
    ApiError::new(ErrorCode::NotFound, format!("unknown region `{id}`"))
}

fn body<T: for<'de> Deserialize<'de>>(req: &ApiRequest) -> Result<T, ApiError> {
    let v = req.body.clone().ok_or_else(|| invalid("request body required"))?;
    serde_json::from_value(v).map_err(|e| invalid(format!("malformed body: {e}")))
}

fn period_param(p: Option<&String>) -> Result<Period, ApiError> {
    match p {
        None => Ok(Period::all()),
        Some(s) => s.parse().map_err(|e: crate::aggregation::AggregationError| invalid(e.to_string())),
    }
}

/// Parses `name=value`.
pub fn parse_delta(s: &str) -> Result<(String, f64), String> {
    let (name, v) = s.split_once('=').ok_or_else(|| format!("delta `{s}` must look like <name>=<value>"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("delta value `{v}` is not a number"))?;
    if !v.is_finite() {
        return Err("delta must be finite".into());
    }
    Ok((name.trim().to_string(), v))
}

fn single_delta(d: &BTreeMap<String, f64>) -> Result<(String, f64), ApiError> {
    match d.iter().next() {
        Some((k, v)) if d.len() == 1 => Ok((k.clone(), *v)),
        _ => Err(invalid("delta must name exactly one LEC")),
    }
}

/// Shared by the API and the CLI so both produce the same fit.
pub fn run_associate(snap: &Snapshot, q: &AssociateQuery) -> Result<FitResult, ApiError> {
    let semantics = match q.semantics {
        Some(s) => s,
        None => default_semantics(&q.outcome).ok_or_else(|| invalid(format!("unknown indicator `{}`", q.outcome)))?,
    };
    if !registered_indicators().contains(&(q.outcome.as_str(), semantics)) {
        return Err(invalid(format!("`{}` is not an indicator under {} semantics", q.outcome, semantics.as_str())));
    }
    let period = period_param(q.period.as_ref())?;
    let ds = snap.dataset(semantics, period).map_err(|e| invalid(e.to_string()))?;
    associate(&snap.dag, &ds, &q.exposure, &q.outcome, &q.covariates).map_err(|e| invalid(e.to_string()))
}

fn config_body(snap: &Snapshot) -> Value {
    let mut indicators: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (n, s) in registered_indicators() {
        indicators.entry(n).or_default().push(s.as_str());
    }
    let lecs: BTreeSet<&str> = snap.lecs.iter().map(|l| l.name.as_str()).collect();
    json!({
        "k_min": snap.aggregation.k_min,
        "semantics": ["habits", "resources"],
        "indicators": indicators.into_iter().map(|(n, s)| json!({"name": n, "semantics": s, "percentage": crate::aggregation::is_percentage(n)})).collect::<Vec<_>>(),
        "lecs": lecs,
        "regions": snap.regions.len(),
        "roles": ["public_health", "clinician", "community"],
        "endpoints": ["/regions", "/regions/{id}/indicators", "/regions/{id}/lecs", "/participants/{pid}/indicators", "/analysis/associate", "/analysis/predict", "/config"],
    })
}

fn regions_body(snap: &Snapshot) -> Value {
    let mut out: Vec<RegionSummary> = snap.regions.iter().map(|r| RegionSummary { id: r.id.clone(), kind: r.kind(), bbox: r.bbox() }).collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    serde_json::to_value(out).expect("regions serialize")
}

fn indicators_body(snap: &Snapshot, id: &str, query: &BTreeMap<String, String>) -> Handled {
    let region = snap.region(id).ok_or_else(|| not_found_region(id))?;
    let semantics: Vec<Semantics> = match query.get("semantics") {
        None => vec![Semantics::Habits, Semantics::Resources],
        Some(s) => vec![s.parse().map_err(|e: crate::aggregation::AggregationError| invalid(e.to_string()))?],
    };
    let period = period_param(query.get("period"))?;
    let name = query.get("name");
    if let Some(n) = name {
        if default_semantics(n).is_none() {
            return Err(invalid(format!("unknown indicator `{n}`")));
        }
    }
    let agg = Aggregator::new(&snap.data, snap.aggregation.clone());
    let mut out = Vec::new();
    for (n, s) in registered_indicators() {
        if semantics.contains(&s) && name.is_none_or(|x| x == n) {
            out.push(agg.aggregate(n, s, region, period).expect("registered indicator"));
        }
    }
    if name.is_some() && out.len() == 1 && out[0].suppressed {
        return Err(ApiError::new(ErrorCode::Suppressed, format!("fewer than {} contributors", snap.aggregation.k_min)));
    }
    if name.is_some() && out.is_empty() {
        return Err(invalid("indicator is not defined under the requested semantics"));
    }
    Ok(json!({ "region_id": id, "k_min": snap.aggregation.k_min, "indicators": out }))
}
