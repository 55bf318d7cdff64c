//! Output files and their metadata sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use causalread::TOOL_VERSION;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{runtime, CliResult};

#[derive(Debug, Serialize)]
pub struct OutputMeta<'a> {
    pub tool_version: &'a str,
    pub command: &'a str,
    pub config_hash: &'a str,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that differs between identical reruns.
    pub created_at: u64,
    #[serde(flatten)]
    pub extra: &'a BTreeMap<String, Value>,
}

/// Hex SHA-256 of the JSON form of a command's configuration.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let bytes = serde_json::to_vec(config).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes outputs of one command invocation.
pub struct Writer {
    command: &'static str,
    config_hash: String,
    seed: u64,
}

impl Writer {
    pub fn new<C: Serialize>(command: &'static str, config: &C, seed: u64) -> Self {
        Writer { command, config_hash: config_hash(config), seed }
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn write(&self, path: &Path, body: &[u8]) -> CliResult<PathBuf> {
        self.write_with(path, body, &BTreeMap::new())
    }

    /// Writes `body` to `path` and the sidecar to `path.meta.json`. Parent directories are created.
    pub fn write_with(&self, path: &Path, body: &[u8], extra: &BTreeMap<String, Value>) -> CliResult<PathBuf> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        }
        std::fs::write(path, body).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        let meta = OutputMeta {
            tool_version: TOOL_VERSION,
            command: self.command,
            config_hash: &self.config_hash,
            seed: self.seed,
            created_at: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            extra,
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        json.push('\n');
        let side = meta_path(path);
        std::fs::write(&side, json).map_err(|e| runtime(format!("cannot write {}: {e}", side.display())))?;
        Ok(path.to_path_buf())
    }
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_config_only() {
        #[derive(Serialize)]
        struct C {
            a: u32,
        }
        assert_eq!(config_hash(&C { a: 1 }), config_hash(&C { a: 1 }));
        assert_ne!(config_hash(&C { a: 1 }), config_hash(&C { a: 2 }));
        assert_eq!(config_hash(&C { a: 1 }).len(), 64);
    }

    #[test]
    fn sidecar_sits_next_to_output() {
        assert_eq!(meta_path(Path::new("out/scores.csv")), PathBuf::from("out/scores.csv.meta.json"));
    }
}
