//! Command-line pipeline stages and the HTTP front end of the portal.

pub mod pipeline;
pub mod server;

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] geobehave_core::ingest::IngestError),
    #[error(transparent)]
    Lec(#[from] geobehave_core::lec::LecError),
    #[error(transparent)]
    Analysis(#[from] geobehave_core::analysis::AnalysisError),
    #[error(transparent)]
    Snapshot(#[from] geobehave_core::portal::SnapshotError),
    #[error(transparent)]
    Sim(#[from] geobehave_sim::SimError),
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}
