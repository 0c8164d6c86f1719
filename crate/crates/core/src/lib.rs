//! Behavioral analytics over mobile sensing data: raw stream ingestion,
//! base/individual/population indicators over geographic regions, local
//! environment conditions and DAG-guided association analysis.

pub mod geo;
pub mod ingest;
pub mod base_indicators;
pub mod aggregation;
pub mod lec;
pub mod analysis;
pub mod config;
pub mod portal;
