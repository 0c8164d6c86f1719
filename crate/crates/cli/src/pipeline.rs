//! The pipeline stages behind the CLI commands, plus an in-memory path from
//! a simulation config straight to a portal snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use geobehave_core::aggregation::{region_visits, Period, PopulationIndicator, ParticipantData, Semantics};
use geobehave_core::analysis::{balance_table, BalanceRow, CausalDag};
use geobehave_core::base_indicators::{extract_participant, merged_track};
use geobehave_core::config::Config;
use geobehave_core::geo::{Poi, PoiIndex, PoiRecord, Region};
use geobehave_core::ingest::{parse_participants, parse_session, prepare_session, Store};
use geobehave_core::lec::{compute_all_lecs, LecFailure, LecRegistry, LecValue, StatTable};
use geobehave_core::portal::{artifacts, Snapshot};
use geobehave_sim::{generate_population, generate_recordings, generate_world, par_map, Population, SimConfig, World};
use serde::Serialize;

use crate::CliError;

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for i in items {
        out.push_str(&serde_json::to_string(i).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Regions file: a JSON array of region records.
pub fn read_regions(path: &Path) -> Result<Vec<Region>, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// POI file: one POI record per line.
pub fn read_pois(path: &Path) -> Result<PoiIndex, CliError> {
    let text = read_text(path)?;
    let mut pois = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: PoiRecord = serde_json::from_str(line).map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        pois.push(Poi::try_from(rec).map_err(|e| CliError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(PoiIndex::new(pois))
}

pub fn read_stat_table(path: &Path) -> Result<StatTable, CliError> {
    Ok(StatTable::from_path(path)?)
}

/// Files named directly plus every `*.jsonl` inside named directories, sorted
/// per directory.
pub fn stream_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            inner.sort();
            out.extend(inner);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestedFile {
    pub file: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pid: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub device: Option<String>,
    /// Records stored by this run; re-ingesting a file stores nothing new.
    pub acc: usize,
    pub loc: usize,
    pub reports: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Parses and stores each stream file independently; one bad file does not
/// stop the others.
pub fn ingest(store: &Store, files: &[PathBuf], participants: Option<&Path>) -> Result<Vec<IngestedFile>, CliError> {
    if let Some(p) = participants {
        let list = parse_participants(&read_text(p)?).map_err(|e| CliError::Invalid(format!("{}: {e}", p.display())))?;
        store.put_participants(&list)?;
    }
    let mut out = Vec::new();
    for f in stream_files(files)? {
        let mut rep = IngestedFile { file: f.display().to_string(), pid: None, device: None, acc: 0, loc: 0, reports: 0, warnings: Vec::new(), error: None };
        match parse_session(&f) {
            Err(e) => rep.error = Some(e.to_string()),
            Ok(s) => {
                rep.pid = Some(s.pid.clone());
                rep.device = Some(s.device_id.clone());
                rep.warnings = s.warnings.clone();
                match store.put(&s) {
                    Ok(stats) => (rep.acc, rep.loc, rep.reports) = (stats.acc, stats.loc, stats.reports),
                    Err(e) => rep.error = Some(e.to_string()),
                }
            }
        }
        out.push(rep);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extracted {
    pub pid: String,
    pub epochs: usize,
    pub transport: usize,
    pub stays: usize,
    pub visits: usize,
    pub sleep: usize,
}

/// Base indicators for every registered participant, stored back into
/// `store` and, with `out`, written as `<out>/<pid>.jsonl`.
pub fn extract(store: &Store, pois: &PoiIndex, cfg: &Config, out: Option<&Path>) -> Result<Vec<Extracted>, CliError> {
    let mut done = Vec::new();
    for p in store.participants()? {
        let sessions = store.load_sessions(&p.pid, &cfg.gaps)?;
        let base = extract_participant(&p, &sessions, pois, &cfg.extract, &cfg.gaps);
        store.put_base(&base)?;
        if let Some(dir) = out {
            write_atomic(&dir.join(format!("{}.jsonl", p.pid)), base.to_jsonl().as_bytes())?;
        }
        done.push(Extracted { pid: p.pid, epochs: base.epochs.len(), transport: base.transport.len(), stays: base.stays.len(), visits: base.visits.len(), sleep: base.sleep.len() });
    }
    Ok(done)
}

/// Region visits of every participant; publishes them with the regions and
/// the aggregation settings, then returns the gated indicators of every
/// region under both semantics.
pub fn aggregate(store: &Store, regions: &[Region], period: Period, cfg: &Config) -> Result<Vec<PopulationIndicator>, CliError> {
    let mut visits = BTreeMap::new();
    for p in store.participants()? {
        let sessions = store.load_sessions(&p.pid, &cfg.gaps)?;
        let (loc, gaps) = merged_track(&sessions);
        visits.insert(p.pid.clone(), region_visits(&p.pid, &loc, &gaps, regions, cfg.gaps.loc_gap_ms(), cfg.aggregation.min_visit_ms()));
    }
    store.docs.upsert(artifacts::VISITS, visits)?;
    store.publish(artifacts::REGIONS, serde_json::to_string(regions).expect("regions serialize").as_bytes())?;
    store.publish(artifacts::AGGREGATION, serde_json::to_string(&cfg.aggregation).expect("config serializes").as_bytes())?;
    let snap = Snapshot::load(store, None)?;
    let mut out = snap.population(Semantics::Habits, period);
    out.extend(snap.population(Semantics::Resources, period));
    store.publish(artifacts::POPULATION, jsonl(&out).as_bytes())?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LecOutput {
    pub values: Vec<LecValue>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<LecFailure>,
}

pub fn lecs(regions: &[Region], pois: &PoiIndex, table: Option<&StatTable>, registry: &LecRegistry) -> LecOutput {
    let (values, failures) = compute_all_lecs(registry, regions, pois, table);
    LecOutput { values, failures }
}

/// Makes LECs, region statistics and optionally a DAG available to `serve`
/// and `analyze dataset`.
pub fn publish_environment(store: &Store, lecs: &[LecValue], table: Option<&StatTable>, dag: Option<&CausalDag>) -> Result<(), CliError> {
    store.publish(artifacts::LECS, serde_json::to_string(lecs).expect("lecs serialize").as_bytes())?;
    if let Some(t) = table {
        store.publish(artifacts::STAT_TABLE, t.to_csv().as_bytes())?;
    }
    if let Some(d) = dag {
        store.publish(artifacts::DAG, serde_json::to_string(&d.to_file()).expect("dag serializes").as_bytes())?;
    }
    Ok(())
}

pub fn balance(store: &Store, cfg: &Config) -> Result<Vec<BalanceRow>, CliError> {
    Ok(balance_table(&store.participants()?, &cfg.analysis.census_margins))
}

/// A simulated study run through ingest preparation, extraction, region
/// visits and LECs without touching disk.
pub struct SimulatedStudy {
    pub world: World,
    pub population: Population,
    pub snapshot: Snapshot,
    /// Monitoring coverage of each participant with sensor data.
    pub coverage: Vec<f64>,
}

pub fn simulate_in_memory(sim: &SimConfig, cfg: &Config, threads: usize) -> Result<SimulatedStudy, CliError> {
    sim.validate()?;
    let world = generate_world(&sim.world)?;
    let population = generate_population(&world, &sim.population, sim.world.seed)?;
    let idx: Vec<usize> = (0..population.participants.len()).collect();
    let results = par_map(&idx, threads, |&i| -> Result<(ParticipantData, Option<f64>), CliError> {
        let (p, b) = (&population.participants[i], &population.profiles[i]);
        let rec = generate_recordings(&world, p, b, &sim.recording, sim.world.seed)?;
        let sessions: Vec<_> = rec.sessions.into_iter().map(|s| prepare_session(s, &cfg.gaps)).collect();
        let coverage = if b.sensorless { None } else { Some(geobehave_core::ingest::monitoring_coverage(&sessions, rec.truth.window, &cfg.gaps)?) };
        let data = ParticipantData::from_sessions(p.clone(), &sessions, &world.pois, &world.regions, &cfg.extract, &cfg.gaps, &cfg.aggregation);
        Ok((data, coverage))
    });
    let mut data = Vec::with_capacity(results.len());
    let mut coverage = Vec::new();
    for r in results {
        let (d, c) = r?;
        data.push(d);
        coverage.extend(c);
    }
    let out = lecs(&world.regions, &world.pois, Some(&world.stat_table), &LecRegistry::default_registry());
    if let Some(f) = out.failures.first() {
        return Err(CliError::Invalid(format!("LEC {} failed for region {}: {}", f.spec, f.region_id, f.error)));
    }
    let snapshot = Snapshot {
        regions: world.regions.clone(),
        data,
        lecs: out.values,
        covariates: Some(world.stat_table.clone()),
        dag: CausalDag::default_dag(),
        aggregation: cfg.aggregation.clone(),
    };
    Ok(SimulatedStudy { world, population, snapshot, coverage })
}
