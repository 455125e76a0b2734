use std::path::{Path, PathBuf};

use lyapfind_core::dynamics::SystemTokenization;
use lyapfind_core::trainer::TrainRunConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to reproduce a run; written before the first epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub system: String,
    /// SHA-256 of the system's token stream.
    pub fingerprint: String,
    pub version: String,
    pub seed: u64,
    pub config: TrainRunConfig,
    pub paths: RunPaths,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunPaths {
    pub manifest: PathBuf,
    pub epochs: PathBuf,
    /// Per-epoch wall time, kept apart so the epoch log is reproducible.
    pub timings: PathBuf,
    pub checkpoints: PathBuf,
    pub found: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            manifest: dir.join("manifest.json"),
            epochs: dir.join("epochs.jsonl"),
            timings: dir.join("timings.jsonl"),
            checkpoints: dir.join("checkpoints"),
            found: dir.join("found.json"),
        }
    }
}

pub fn fingerprint(t: &SystemTokenization) -> String {
    let mut h = Sha256::new();
    for c in t.codes() {
        h.update(c.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
