use std::path::Path;

use super::{validate_id, AccSample, IngestError, LocSample, Participant, RawRecord, RecordingSession, SelfReport};

/// Parses a raw stream file. Participant and device ids come from a `meta`
/// record if present, otherwise from a `<pid>__<device>` file stem.
pub fn parse_session(path: &Path) -> Result<RecordingSession, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let ids = match stem.split_once("__") {
        Some((pid, dev)) => Some((pid.to_string(), dev.to_string())),
        None if !stem.is_empty() => Some((stem.to_string(), "phone".to_string())),
        None => None,
    };
    parse_session_str(&text, ids)
}

pub fn parse_session_str(text: &str, ids: Option<(String, String)>) -> Result<RecordingSession, IngestError> {
    let mut session = RecordingSession::default();
    let mut meta: Option<(String, String)> = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| IngestError::Parse { line: lineno, message };
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        match raw {
            RawRecord::Meta { pid, device } => meta = Some((pid, device)),
            r @ RawRecord::Acc { .. } => session.acc.push(AccSample::try_from(r).map_err(|e| err(e.to_string()))?),
            r @ RawRecord::Loc { .. } => session.loc.push(LocSample::try_from(r).map_err(|e| err(e.to_string()))?),
            r @ RawRecord::Report { .. } => session.reports.push(SelfReport::try_from(r).map_err(|e| err(e.to_string()))?),
        }
    }
    let (pid, device) = meta.or(ids).ok_or_else(|| IngestError::Invalid("stream file names no participant".into()))?;
    validate_id(&pid)?;
    validate_id(&device)?;
    session.pid = pid;
    session.device_id = device;
    session.normalize();
    session.estimate_nominal_rate();
    Ok(session)
}

/// Participant roster: one JSON object per line.
pub fn parse_participants(text: &str) -> Result<Vec<Participant>, IngestError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| IngestError::Parse { line: i + 1, message: e.to_string() }))
        .collect()
}
