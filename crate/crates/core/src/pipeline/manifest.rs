//! Run manifests: what a stage consumed, what it wrote, and content hashes
//! that make reruns comparable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Hash over the relative paths and contents of every file below `dir`,
/// visited in sorted order. Manifest files are skipped.
pub fn hash_tree(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(hash_file(&dir.join(&rel))?.as_bytes());
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            let rel = path.strip_prefix(root).expect("walked below root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_s: f64,
    /// Per-item wall-clock figures (such as simulation latencies).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, f64>,
}

/// Record written next to every stage's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub tool_version: String,
    /// Configuration sections the stage read.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Hash of `config` and of every upstream manifest.
    pub inputs_hash: String,
    /// Content hash per artifact, keyed by path relative to the stage dir.
    /// Timing measurements are never part of these hashes.
    pub outputs: BTreeMap<String, String>,
    /// Stage-specific results worth reading without opening the artifacts.
    #[serde(default)]
    pub summary: serde_json::Value,
    /// Excluded from [`RunManifest::content_hash`].
    #[serde(default)]
    pub timing: Timing,
}

impl RunManifest {
    /// Hash of everything except timing. Two runs with equal content hashes
    /// consumed the same inputs and produced the same artifacts.
    pub fn content_hash(&self) -> String {
        let stripped = Self { timing: Timing::default(), ..self.clone() };
        sha256_hex(&serde_json::to_vec(&stripped).expect("manifest serializes"))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Whether the artifacts in `dir` were produced from `inputs_hash` and
    /// are all still present.
    pub fn is_current(&self, dir: &Path, inputs_hash: &str) -> bool {
        self.inputs_hash == inputs_hash && self.outputs.keys().all(|k| dir.join(k).exists())
    }
}

/// Hash of a config snapshot followed by upstream manifest content hashes.
pub fn inputs_hash(config: &serde_json::Value, upstream: &[&RunManifest]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    for m in upstream {
        h.update([0]);
        h.update(m.stage.as_bytes());
        h.update(m.content_hash().as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> RunManifest {
        RunManifest {
            stage: "encode".into(),
            tool_version: "0".into(),
            config: serde_json::json!({"form": "add"}),
            seeds: BTreeMap::from([("synth".into(), 3)]),
            inputs_hash: "x".into(),
            outputs: BTreeMap::from([("a.bin".into(), "00".into())]),
            summary: serde_json::Value::Null,
            timing: Timing { elapsed_s: 1.5, detail: BTreeMap::new() },
        }
    }

    #[test]
    fn content_hash_ignores_timing_only() {
        let a = manifest();
        let b = RunManifest { timing: Timing { elapsed_s: 99.0, detail: BTreeMap::from([("t".into(), 0.1)]) }, ..a.clone() };
        assert_eq!(a.content_hash(), b.content_hash());
        let c = RunManifest { outputs: BTreeMap::from([("a.bin".into(), "01".into())]), ..a.clone() };
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn tree_hash_sees_names_and_contents() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/x"), b"1").unwrap();
        let h1 = hash_tree(dir.path()).unwrap();
        manifest().write(dir.path()).unwrap();
        assert_eq!(hash_tree(dir.path()).unwrap(), h1);
        fs::write(dir.path().join("sub/x"), b"2").unwrap();
        let h2 = hash_tree(dir.path()).unwrap();
        assert_ne!(h1, h2);
        fs::rename(dir.path().join("sub/x"), dir.path().join("sub/y")).unwrap();
        assert_ne!(hash_tree(dir.path()).unwrap(), h2);
    }

    #[test]
    fn inputs_hash_tracks_upstream() {
        let cfg = serde_json::json!({"k": 1});
        let up = manifest();
        let changed = RunManifest { outputs: BTreeMap::new(), ..up.clone() };
        assert_eq!(inputs_hash(&cfg, &[&up]), inputs_hash(&cfg, &[&up]));
        assert_ne!(inputs_hash(&cfg, &[&up]), inputs_hash(&cfg, &[&changed]));
        assert_ne!(inputs_hash(&cfg, &[&up]), inputs_hash(&serde_json::json!({"k": 2}), &[&up]));
    }
}
