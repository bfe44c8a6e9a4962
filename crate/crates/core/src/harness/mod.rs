//! Experiment orchestration: configuration, seeded randomness, run modes,
//! on-disk artifacts and replay.

mod config;
mod replay;
mod run;
mod seed;

pub use config::{ConfigError, Mode, RunConfig};
pub use replay::{replay, Divergence, ReplayError, ReplayReport};
pub use run::{run, FileEntry, Manifest, RunError, RunSummary, MANIFEST_FILE, MANIFEST_VERSION};
pub use seed::{fnv1a, substream};
