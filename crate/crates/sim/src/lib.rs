//! Deterministic synthetic world for end-to-end checks of the indicator
//! pipeline: geohash regions with Poisson-placed POIs, a participant
//! population whose behavior depends on region conditions through planted
//! coefficients, and raw sensor streams in the ingest format.
//!
//! Randomness comes from ChaCha8 with one stream per concern, all keyed by
//! the same seed: stream 0 builds the world, stream 1 the population, and
//! each participant's recordings use the stream named by the 64-bit FNV-1a
//! hash of the pid with the top bit set. Location and the two accelerometer
//! streams use that value with its low bits xored by 1, 2 and 3. A
//! participant's streams therefore do not depend on generation order or on
//! how many other participants exist.

pub mod config;
pub mod output;
mod plan;
pub mod population;
pub mod recording;
mod signal;
pub mod world;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{Effects, PopulationConfig, RecordingConfig, SimConfig, WorldConfig};
pub use output::{write_tree, write_tree_with, TreeSummary};
pub use population::{generate_population, ActivityMix, BehaviorProfile, Population};
pub use recording::{generate_recordings, Recording, RecordingTruth, StayTruth, PHONE, WATCH};
pub use world::{generate_world, PlantedEffect, RegionTruth, World, WorldTruth};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("world generation failed: {0}")]
    World(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl SimError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        SimError::Io { path: path.display().to_string(), source }
    }
}

pub(crate) const WORLD_STREAM: u64 = 0;
pub(crate) const POPULATION_STREAM: u64 = 1;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn participant_stream(pid: &str) -> u64 {
    fnv1a(pid.as_bytes()) | 1 << 63
}

/// Maps `f` over `items` on up to `threads` scoped threads. Output order
/// follows input order whatever the thread count.
pub fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, R)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break local;
                        }
                        local.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

/// Worker threads to use by default.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
