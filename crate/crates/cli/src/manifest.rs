//! Run manifests tying every artifact to the inputs that produced it.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use dualmoe_core::trainer::dataset::{sha256_hex, write_json};
use dualmoe_core::Result;
use serde::{Deserialize, Serialize};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub dataset_manifest_hash: Option<String>,
    pub checkpoint_hash: Option<String>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    manifest_hash: String,
    #[serde(flatten)]
    manifest: &'a RunManifest,
}

/// Hashed identity of a run; timestamps are left out so reruns agree.
#[derive(Serialize)]
struct Identity<'a> {
    command: &'a str,
    config_hash: &'a str,
    dataset_manifest_hash: &'a Option<String>,
    checkpoint_hash: &'a Option<String>,
    seed: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// SHA-256 of the JSON form of a configuration value.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serialises"))
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash,
            dataset_manifest_hash: None,
            checkpoint_hash: None,
            seed,
            started_unix: unix_now(),
            finished_unix: None,
        }
    }

    pub fn hash(&self) -> String {
        let id = Identity {
            command: &self.command,
            config_hash: &self.config_hash,
            dataset_manifest_hash: &self.dataset_manifest_hash,
            checkpoint_hash: &self.checkpoint_hash,
            seed: self.seed,
        };
        sha256_hex(&serde_json::to_vec(&id).expect("identity serialises"))
    }

    /// Stamps the finish time and writes the manifest into `dir`.
    pub fn finish(&mut self, dir: &Path) -> Result<()> {
        self.finished_unix = Some(unix_now());
        let file = ManifestFile {
            manifest_hash: self.hash(),
            manifest: self,
        };
        write_json(&dir.join(RUN_MANIFEST_FILE), &file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_timestamps() {
        let mut a = RunManifest::start("eval", "c".into(), 3);
        let mut b = a.clone();
        a.started_unix = 1;
        b.started_unix = 2;
        b.finished_unix = Some(9);
        assert_eq!(a.hash(), b.hash());
        b.checkpoint_hash = Some("x".into());
        assert_ne!(a.hash(), b.hash());
    }
}
