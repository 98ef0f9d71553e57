//! Run manifests: what a command read, wrote and measured, written as JSON
//! next to its outputs once the run has succeeded.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::KvConfig;
use crate::error::Result;
use crate::io::{file_digest, sha256_hex, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: BTreeMap<String, String>,
    pub config_digest: String,
    pub seed: u64,
    /// Input path to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub duration_secs: f64,
    pub metrics: BTreeMap<String, serde_json::Value>,
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: impl Into<String>, args: Vec<String>, seed: u64) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                args,
                config: BTreeMap::new(),
                config_digest: sha256_hex(b""),
                seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                duration_secs: 0.0,
                metrics: BTreeMap::new(),
            },
            started: Instant::now(),
        }
    }

    pub fn config(&mut self, kv: &KvConfig) -> &mut Self {
        self.manifest.config = kv
            .keys()
            .map(|k| (k.to_string(), kv.get_str(k).unwrap_or("").to_string()))
            .collect();
        self.manifest.config_digest = sha256_hex(kv.to_text().as_bytes());
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest
            .inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        self.manifest
            .outputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn metric(&mut self, key: impl Into<String>, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.manifest.metrics.insert(key.into(), v);
        self
    }

    pub fn finish(mut self) -> RunManifest {
        self.manifest.duration_secs = self.started.elapsed().as_secs_f64();
        self.manifest
    }
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Conventional manifest location for an output file: `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> std::path::PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}
