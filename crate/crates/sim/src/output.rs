//! Writes a full synthetic study as an input tree for the pipeline.
//!
//! ```text
//! config.toml          the resolved simulation config
//! regions.json         region definitions
//! pois.jsonl           POI dataset
//! stat_table.csv       per-region statistics
//! participants.jsonl   participant records
//! raw/<pid>__<device>.jsonl
//! truth/world.json     planted effects and per-region truth
//! truth/profiles.jsonl
//! truth/recordings.jsonl
//! ```
//!
//! Everything under `truth/` is for test oracles only.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use geobehave_core::geo::PoiRecord;
use geobehave_core::ingest::{RawRecord, RecordingSession};
use serde::Serialize;

use crate::config::SimConfig;
use crate::population::generate_population;
use crate::recording::{generate_recordings, RecordingTruth};
use crate::world::generate_world;
use crate::{default_threads, par_map, SimError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSummary {
    pub regions: usize,
    pub pois: usize,
    pub participants: usize,
    pub sessions: usize,
    pub acc_samples: usize,
    pub loc_samples: usize,
    pub reports: usize,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SimError> {
    fs::write(path, bytes).map_err(|e| SimError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), SimError> {
    let file = File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item).map_err(|e| SimError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| SimError::io(path, e))?;
    }
    w.flush().map_err(|e| SimError::io(path, e))
}

fn write_session(dir: &Path, s: &RecordingSession) -> Result<(), SimError> {
    let path = dir.join(format!("{}__{}.jsonl", s.pid, s.device_id));
    let meta = std::iter::once(RawRecord::Meta { pid: s.pid.clone(), device: s.device_id.clone() });
    let acc = s.acc.iter().map(|&a| RawRecord::from(a));
    let loc = s.loc.iter().map(|&l| RawRecord::from(l));
    let rep = s.reports.iter().map(|r| RawRecord::from(r.clone()));
    write_jsonl(&path, meta.chain(acc).chain(loc).chain(rep))
}

/// Generates the study described by `cfg` into `dir`. The output is byte
/// identical for a given config whatever the thread count.
pub fn write_tree(dir: &Path, cfg: &SimConfig) -> Result<TreeSummary, SimError> {
    write_tree_with(dir, cfg, default_threads())
}

pub fn write_tree_with(dir: &Path, cfg: &SimConfig, threads: usize) -> Result<TreeSummary, SimError> {
    cfg.validate()?;
    let world = generate_world(&cfg.world)?;
    let pop = generate_population(&world, &cfg.population, cfg.world.seed)?;
    let raw = dir.join("raw");
    let truth = dir.join("truth");
    for d in [dir, &raw, &truth] {
        fs::create_dir_all(d).map_err(|e| SimError::io(d, e))?;
    }
    write_file(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    let regions = serde_json::to_vec_pretty(&world.regions).expect("regions serialize");
    write_file(&dir.join("regions.json"), &regions)?;
    write_jsonl(&dir.join("pois.jsonl"), world.pois.iter().cloned().map(PoiRecord::from))?;
    write_file(&dir.join("stat_table.csv"), world.stat_table.to_csv().as_bytes())?;
    write_jsonl(&dir.join("participants.jsonl"), &pop.participants)?;
    write_file(&truth.join("world.json"), &serde_json::to_vec_pretty(&world.truth).expect("truth serializes"))?;
    write_jsonl(&truth.join("profiles.jsonl"), &pop.profiles)?;

    let pairs: Vec<usize> = (0..pop.participants.len()).collect();
    let results = par_map(&pairs, threads, |&i| -> Result<(RecordingTruth, [usize; 4]), SimError> {
        let r = generate_recordings(&world, &pop.participants[i], &pop.profiles[i], &cfg.recording, cfg.world.seed)?;
        let mut counts = [0; 4];
        for s in &r.sessions {
            write_session(&raw, s)?;
            counts[0] += 1;
            counts[1] += s.acc.len();
            counts[2] += s.loc.len();
            counts[3] += s.reports.len();
        }
        Ok((r.truth, counts))
    });
    let mut truths = Vec::with_capacity(results.len());
    let mut totals = [0usize; 4];
    for r in results {
        let (t, c) = r?;
        truths.push(t);
        for k in 0..4 {
            totals[k] += c[k];
        }
    }
    write_jsonl(&truth.join("recordings.jsonl"), &truths)?;
    Ok(TreeSummary {
        regions: world.regions.len(),
        pois: world.pois.len(),
        participants: pop.participants.len(),
        sessions: totals[0],
        acc_samples: totals[1],
        loc_samples: totals[2],
        reports: totals[3],
    })
}
