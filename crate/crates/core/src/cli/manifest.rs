use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of everything that determines the artifacts: experiment, config,
/// seed and code version. Object keys serialise sorted, so the hash does not
/// depend on key order in the config file.
pub fn manifest_hash(experiment: &str, config: &serde_json::Value, seed: u64) -> String {
    let canonical = serde_json::json!({
        "experiment": experiment,
        "config": config,
        "seed": seed,
        "code_version": CODE_VERSION,
    });
    sha256_hex(canonical.to_string().as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub code_version: String,
    pub wall_time_s: f64,
    pub manifest_hash: String,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Writes artifacts into one directory, stamping each with the manifest
/// hash and recording its digest.
pub struct ArtifactSink {
    dir: PathBuf,
    hash: String,
    entries: Vec<ArtifactEntry>,
}

impl ArtifactSink {
    pub fn new(dir: &Path, hash: String) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            entries: Vec::new(),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        std::fs::write(self.dir.join(name), &bytes)?;
        self.entries.push(ArtifactEntry {
            file: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// CSV artifact whose first line is `# manifest: <hash>`.
    pub fn csv(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = format!("# manifest: {}\n", self.hash).into_bytes();
        body(&mut buf)?;
        self.put(name, buf)
    }

    /// JSON artifact; objects gain a `manifest_hash` key.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        match &mut v {
            serde_json::Value::Object(o) => {
                o.insert("manifest_hash".into(), serde_json::Value::String(self.hash.clone()));
            }
            _ => {
                v = serde_json::json!({ "manifest_hash": self.hash, "value": v });
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&v)?;
        bytes.push(b'\n');
        self.put(name, bytes)
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.artifacts = self.entries;
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(self.dir.join("manifest.json"), bytes).map_err(Error::from)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"a": 1, "b": [2, 3]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"b": [2, 3], "a": 1}"#).unwrap();
        assert_eq!(manifest_hash("toy", &a, 1), manifest_hash("toy", &b, 1));
        assert_ne!(manifest_hash("toy", &a, 1), manifest_hash("toy", &a, 2));
    }

    #[test]
    fn artifacts_carry_the_hash() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = ArtifactSink::new(dir.path(), "abc".into()).unwrap();
        sink.csv("t.csv", |w| {
            w.extend_from_slice(b"x\n1\n");
            Ok(())
        })
        .unwrap();
        sink.json("r.json", &serde_json::json!({"k": 1})).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert!(csv.starts_with("# manifest: abc\n"));
        let js: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
        assert_eq!(js["manifest_hash"], "abc");
    }
}
