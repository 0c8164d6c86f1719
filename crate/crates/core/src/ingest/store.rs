//! File-backed persistence.
//!
//! Time series live in an append-only segmented log per
//! `(pid, device, stream)`:
//!
//! ```text
//! <root>/ts/<pid>/<device>/<stream>/manifest.jsonl
//! <root>/ts/<pid>/<device>/<stream>/000001.jsonl
//! ```
//!
//! A segment is written to a temporary file, renamed into place, and only then
//! committed by appending its manifest line (count, time range, SHA-256).
//! Readers ignore segments without a complete manifest line. Everything that
//! is not a time series goes into JSONL document collections under
//! `<root>/docs/`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{validate_id, AccSample, EpochMs, IngestError, LocSample, Participant, RecordingSession, SelfReport};
use crate::ingest::gaps::{prepare_session, GapConfig};

pub trait StreamRecord: Serialize + DeserializeOwned + Clone {
    const STREAM: &'static str;
    fn t(&self) -> EpochMs;
}

impl StreamRecord for AccSample {
    const STREAM: &'static str = "acc";
    fn t(&self) -> EpochMs {
        self.t
    }
}

impl StreamRecord for LocSample {
    const STREAM: &'static str = "loc";
    fn t(&self) -> EpochMs {
        self.t
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentEntry {
    segment: String,
    count: usize,
    t_min: EpochMs,
    t_max: EpochMs,
    sha256: String,
}

#[derive(Debug, Clone)]
pub struct TimeSeriesStore {
    root: PathBuf,
}

fn read_file(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|e| IngestError::io(path, e))
}

fn check_artifact_name(name: &str) -> Result<(), IngestError> {
    let (stem, ext) = name.split_once('.').unwrap_or((name, "x"));
    validate_id(stem)?;
    if ext.is_empty() || !ext.bytes().all(|c| c.is_ascii_alphanumeric()) {
        return Err(IngestError::Invalid(format!("artifact name `{name}` must look like `<id>.<ext>`")));
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| IngestError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| IngestError::io(&tmp, e))?;
        f.sync_all().map_err(|e| IngestError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| IngestError::io(path, e))
}

impl TimeSeriesStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| IngestError::io(&root, e))?;
        Ok(Self { root })
    }

    fn partition(&self, pid: &str, device: &str, stream: &str) -> PathBuf {
        self.root.join(pid).join(device).join(stream)
    }

    fn manifest(&self, dir: &Path) -> Result<Vec<SegmentEntry>, IngestError> {
        let path = dir.join("manifest.jsonl");
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = String::from_utf8(read_file(&path)?).map_err(|_| IngestError::Integrity(format!("{} is not UTF-8", path.display())))?;
        // Only newline-terminated lines are committed.
        let committed = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        committed
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| IngestError::Integrity(format!("{}: {e}", path.display()))))
            .collect()
    }

    fn read_segment<T: StreamRecord>(&self, dir: &Path, entry: &SegmentEntry) -> Result<Vec<T>, IngestError> {
        let path = dir.join(&entry.segment);
        let bytes = read_file(&path).map_err(|_| IngestError::Integrity(format!("missing segment {}", path.display())))?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(IngestError::Integrity(format!("checksum mismatch in {}", path.display())));
        }
        let text = String::from_utf8(bytes).map_err(|_| IngestError::Integrity(format!("{} is not UTF-8", path.display())))?;
        let rows: Vec<T> = text
            .lines()
            .map(|l| serde_json::from_str(l).map_err(|e| IngestError::Integrity(format!("{}: {e}", path.display()))))
            .collect::<Result<_, _>>()?;
        if rows.len() != entry.count {
            return Err(IngestError::Integrity(format!("{} holds {} records, manifest says {}", path.display(), rows.len(), entry.count)));
        }
        Ok(rows)
    }

    /// Samples with `t_from <= t < t_to`, time-ordered. Unknown partitions are empty.
    pub fn query<T: StreamRecord>(&self, pid: &str, device: &str, t_from: EpochMs, t_to: EpochMs) -> Result<Vec<T>, IngestError> {
        let dir = self.partition(pid, device, T::STREAM);
        let mut out = Vec::new();
        for entry in self.manifest(&dir)? {
            if entry.t_max < t_from || entry.t_min >= t_to {
                continue;
            }
            out.extend(self.read_segment::<T>(&dir, &entry)?.into_iter().filter(|r| r.t() >= t_from && r.t() < t_to));
        }
        out.sort_by_key(|r| r.t());
        Ok(out)
    }

    /// Appends the records whose timestamps are not yet stored. Returns how many were new.
    pub fn append<T: StreamRecord>(&self, pid: &str, device: &str, records: &[T]) -> Result<usize, IngestError> {
        let (Some(first), Some(last)) = (records.iter().map(|r| r.t()).min(), records.iter().map(|r| r.t()).max()) else {
            return Ok(0);
        };
        let dir = self.partition(pid, device, T::STREAM);
        let existing: HashSet<EpochMs> = self.query::<T>(pid, device, first, last + 1)?.iter().map(|r| r.t()).collect();
        let mut seen = HashSet::new();
        let fresh: Vec<&T> = records.iter().filter(|r| !existing.contains(&r.t()) && seen.insert(r.t())).collect();
        if fresh.is_empty() {
            return Ok(0);
        }
        fs::create_dir_all(&dir).map_err(|e| IngestError::io(&dir, e))?;
        let manifest = self.manifest(&dir)?;
        let name = format!("{:06}.jsonl", manifest.len() + 1);
        let mut body = Vec::new();
        for r in &fresh {
            serde_json::to_writer(&mut body, r).expect("records serialize");
            body.push(b'\n');
        }
        let entry = SegmentEntry {
            segment: name.clone(),
            count: fresh.len(),
            t_min: fresh.iter().map(|r| r.t()).min().expect("non-empty"),
            t_max: fresh.iter().map(|r| r.t()).max().expect("non-empty"),
            sha256: hex::encode(Sha256::digest(&body)),
        };
        write_atomic(&dir.join(&name), &body)?;
        let mpath = dir.join("manifest.jsonl");
        let mut line = serde_json::to_vec(&entry).expect("entry serializes");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&mpath).map_err(|e| IngestError::io(&mpath, e))?;
        f.write_all(&line).map_err(|e| IngestError::io(&mpath, e))?;
        f.sync_all().map_err(|e| IngestError::io(&mpath, e))?;
        Ok(fresh.len())
    }

    fn list_dirs(dir: &Path) -> Result<Vec<String>, IngestError> {
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names: Vec<String> = fs::read_dir(dir)
            .map_err(|e| IngestError::io(dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(str::to_string))
            .collect();
        names.sort();
        Ok(names)
    }

    pub fn pids(&self) -> Result<Vec<String>, IngestError> {
        Self::list_dirs(&self.root)
    }

    pub fn devices(&self, pid: &str) -> Result<Vec<String>, IngestError> {
        Self::list_dirs(&self.root.join(pid))
    }
}

/// Keyed JSONL collections, rewritten atomically on every upsert.
#[derive(Debug, Clone)]
pub struct DocStore {
    root: PathBuf,
}

impl DocStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| IngestError::io(&root, e))?;
        Ok(Self { root })
    }

    fn path(&self, collection: &str) -> PathBuf {
        self.root.join(format!("{collection}.jsonl"))
    }

    pub fn load<T: DeserializeOwned>(&self, collection: &str) -> Result<BTreeMap<String, T>, IngestError> {
        let path = self.path(collection);
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let text = String::from_utf8(read_file(&path)?).map_err(|_| IngestError::Integrity(format!("{} is not UTF-8", path.display())))?;
        let mut out = BTreeMap::new();
        for l in text.lines() {
            let (k, v): (String, T) = serde_json::from_str(l).map_err(|e| IngestError::Integrity(format!("{}: {e}", path.display())))?;
            out.insert(k, v);
        }
        Ok(out)
    }

    pub fn upsert<T: Serialize + DeserializeOwned>(&self, collection: &str, docs: impl IntoIterator<Item = (String, T)>) -> Result<(), IngestError> {
        let mut all: BTreeMap<String, serde_json::Value> = self.load(collection)?;
        for (k, v) in docs {
            all.insert(k, serde_json::to_value(v).expect("document serializes"));
        }
        let mut body = Vec::new();
        for (k, v) in &all {
            serde_json::to_writer(&mut body, &(k, v)).expect("document serializes");
            body.push(b'\n');
        }
        write_atomic(&self.path(collection), &body)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SessionMeta {
    pid: String,
    device_id: String,
    nominal_acc_hz: Option<f64>,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PutStats {
    pub acc: usize,
    pub loc: usize,
    pub reports: usize,
}

/// Combined time-series and document store rooted at one directory.
#[derive(Debug, Clone)]
pub struct Store {
    pub ts: TimeSeriesStore,
    pub docs: DocStore,
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, IngestError> {
        let root = root.as_ref();
        for sub in ["base", "published"] {
            fs::create_dir_all(root.join(sub)).map_err(|e| IngestError::io(root, e))?;
        }
        Ok(Self { ts: TimeSeriesStore::open(root.join("ts"))?, docs: DocStore::open(root.join("docs"))?, root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Replaces a participant's base indicators (`<root>/base/<pid>.jsonl`).
    pub fn put_base(&self, base: &crate::base_indicators::BaseIndicators) -> Result<(), IngestError> {
        validate_id(&base.pid)?;
        write_atomic(&self.root.join("base").join(format!("{}.jsonl", base.pid)), base.to_jsonl().as_bytes())
    }

    pub fn load_base(&self, pid: &str) -> Result<Option<crate::base_indicators::BaseIndicators>, IngestError> {
        validate_id(pid)?;
        let path = self.root.join("base").join(format!("{pid}.jsonl"));
        if !path.exists() {
            return Ok(None);
        }
        let text = String::from_utf8(read_file(&path)?).map_err(|_| IngestError::Integrity(format!("{} is not UTF-8", path.display())))?;
        crate::base_indicators::BaseIndicators::from_jsonl(pid, &text).map(Some).map_err(|e| IngestError::Integrity(format!("{}: {e}", path.display())))
    }

    pub fn base_pids(&self) -> Result<Vec<String>, IngestError> {
        let dir = self.root.join("base");
        let mut out = Vec::new();
        for e in fs::read_dir(&dir).map_err(|e| IngestError::io(&dir, e))? {
            let name = e.map_err(|e| IngestError::io(&dir, e))?.file_name().to_string_lossy().into_owned();
            if let Some(pid) = name.strip_suffix(".jsonl") {
                out.push(pid.to_string());
            }
        }
        out.sort();
        Ok(out)
    }

    /// Writes a derived artifact under `<root>/published/` atomically.
    pub fn publish(&self, name: &str, bytes: &[u8]) -> Result<(), IngestError> {
        check_artifact_name(name)?;
        write_atomic(&self.root.join("published").join(name), bytes)
    }

    pub fn published(&self, name: &str) -> Result<Option<Vec<u8>>, IngestError> {
        check_artifact_name(name)?;
        let path = self.root.join("published").join(name);
        if path.exists() {
            read_file(&path).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn put(&self, session: &RecordingSession) -> Result<PutStats, IngestError> {
        validate_id(&session.pid)?;
        validate_id(&session.device_id)?;
        let acc = self.ts.append(&session.pid, &session.device_id, &session.acc)?;
        let loc = self.ts.append(&session.pid, &session.device_id, &session.loc)?;
        let key = format!("{}/{}", session.pid, session.device_id);
        let mut known: BTreeMap<String, Vec<SelfReport>> = self.docs.load("reports")?;
        let entry = known.remove(&key).unwrap_or_default();
        let before = entry.len();
        let mut merged = entry;
        for r in &session.reports {
            if !merged.iter().any(|m| m.t == r.t && m.kind == r.kind) {
                merged.push(r.clone());
            }
        }
        merged.sort_by_key(|r| (r.t, r.kind));
        let reports = merged.len() - before;
        if reports > 0 {
            self.docs.upsert("reports", [(key.clone(), merged)])?;
        }
        let mut sessions: BTreeMap<String, SessionMeta> = self.docs.load("sessions")?;
        let (nominal_acc_hz, warnings) = if sessions.contains_key(&key) && acc > 0 {
            // Later batches change the rate estimate, so re-derive it from everything stored.
            let mut probe = RecordingSession::new(&session.pid, &session.device_id);
            probe.acc = self.ts.query(&session.pid, &session.device_id, EpochMs::MIN, EpochMs::MAX)?;
            probe.estimate_nominal_rate();
            (probe.nominal_acc_hz, probe.warnings)
        } else if let Some(m) = sessions.remove(&key) {
            (m.nominal_acc_hz, m.warnings)
        } else {
            let mut probe = RecordingSession::new(&session.pid, &session.device_id);
            probe.acc = session.acc.clone();
            probe.normalize();
            probe.estimate_nominal_rate();
            (probe.nominal_acc_hz, probe.warnings)
        };
        let meta = SessionMeta { pid: session.pid.clone(), device_id: session.device_id.clone(), nominal_acc_hz, warnings };
        self.docs.upsert("sessions", [(key, meta)])?;
        Ok(PutStats { acc, loc, reports })
    }

    pub fn put_participants(&self, participants: &[Participant]) -> Result<(), IngestError> {
        self.docs.upsert("participants", participants.iter().map(|p| (p.pid.clone(), p.clone())))
    }

    pub fn participants(&self) -> Result<Vec<Participant>, IngestError> {
        Ok(self.docs.load::<Participant>("participants")?.into_values().collect())
    }

    pub fn pids(&self) -> Result<Vec<String>, IngestError> {
        self.ts.pids()
    }

    pub fn devices(&self, pid: &str) -> Result<Vec<String>, IngestError> {
        self.ts.devices(pid)
    }

    pub fn query_acc(&self, pid: &str, device: &str, t_from: EpochMs, t_to: EpochMs) -> Result<Vec<AccSample>, IngestError> {
        self.ts.query(pid, device, t_from, t_to)
    }

    pub fn query_loc(&self, pid: &str, device: &str, t_from: EpochMs, t_to: EpochMs) -> Result<Vec<LocSample>, IngestError> {
        self.ts.query(pid, device, t_from, t_to)
    }

    /// Rebuilds a session from the store with gaps detected and annotated.
    pub fn load_session(&self, pid: &str, device: &str, cfg: &GapConfig) -> Result<RecordingSession, IngestError> {
        let mut s = RecordingSession::new(pid, device);
        s.acc = self.query_acc(pid, device, EpochMs::MIN, EpochMs::MAX)?;
        s.loc = self.query_loc(pid, device, EpochMs::MIN, EpochMs::MAX)?;
        let key = format!("{pid}/{device}");
        s.reports = self.docs.load::<Vec<SelfReport>>("reports")?.remove(&key).unwrap_or_default();
        if let Some(meta) = self.docs.load::<SessionMeta>("sessions")?.remove(&key) {
            s.nominal_acc_hz = meta.nominal_acc_hz;
            s.warnings = meta.warnings;
        }
        Ok(prepare_session(s, cfg))
    }

    pub fn load_sessions(&self, pid: &str, cfg: &GapConfig) -> Result<Vec<RecordingSession>, IngestError> {
        self.devices(pid)?.iter().map(|d| self.load_session(pid, d, cfg)).collect()
    }
}
