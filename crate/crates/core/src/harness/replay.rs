//! Re-running a recorded configuration and comparing artifacts byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::run::{run, Manifest, RunError, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("corrupt manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("replay run failed: {0}")]
    Run(#[from] RunError),
    #[error("cannot create scratch directory: {0}")]
    Scratch(std::io::Error),
}

/// First difference between a recorded and a replayed artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub file: String,
    pub byte_offset: usize,
    /// 1-based line of the first differing byte.
    pub line: usize,
    pub recorded: String,
    pub replayed: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub files_compared: usize,
    pub divergence: Option<Divergence>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.divergence.is_none()
    }
}

fn read(path: &Path) -> Result<Vec<u8>, ReplayError> {
    fs::read(path).map_err(|source| ReplayError::Read { path: path.to_path_buf(), source })
}

fn line_at(bytes: &[u8], offset: usize) -> String {
    let start = bytes[..offset.min(bytes.len())].iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
    let end = bytes[start..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |p| start + p);
    String::from_utf8_lossy(&bytes[start..end]).chars().take(200).collect()
}

/// First differing position of two artifacts, if any.
pub fn first_divergence(file: &str, recorded: &[u8], replayed: &[u8]) -> Option<Divergence> {
    let offset = match recorded.iter().zip(replayed).position(|(a, b)| a != b) {
        Some(i) => i,
        None if recorded.len() == replayed.len() => return None,
        None => recorded.len().min(replayed.len()),
    };
    Some(Divergence {
        file: file.to_string(),
        byte_offset: offset,
        line: recorded[..offset].iter().filter(|&&b| b == b'\n').count() + 1,
        recorded: line_at(recorded, offset),
        replayed: line_at(replayed, offset),
    })
}

/// Re-runs the configuration stored in `manifest_path` in a scratch
/// directory and compares every listed artifact, then the manifest itself.
pub fn replay(manifest_path: &Path) -> Result<ReplayReport, ReplayError> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let manifest_bytes = read(manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;
    let scratch = tempfile::tempdir().map_err(ReplayError::Scratch)?;
    run(&manifest.config, scratch.path())?;

    let mut names: Vec<&str> = manifest.files.iter().map(|f| f.name.as_str()).collect();
    names.push(MANIFEST_FILE);
    let mut compared = 0;
    for name in names {
        let recorded = read(&dir.join(name))?;
        let replayed = fs::read(scratch.path().join(name)).unwrap_or_default();
        compared += 1;
        if let Some(d) = first_divergence(name, &recorded, &replayed) {
            return Ok(ReplayReport { files_compared: compared, divergence: Some(d) });
        }
    }
    Ok(ReplayReport { files_compared: compared, divergence: None })
}
