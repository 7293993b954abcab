//! Weight archives: an 8-byte magic, a JSON manifest, then named tensors of
//! little-endian `f32` values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wmd_nn::{Layer, Real};

use super::{layer_of, ClassifierModel, ModelConfig, Pretrained};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WMDCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Named parameter values, including batch-norm running statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightSet {
    pub entries: BTreeMap<String, WeightEntry>,
}

impl WeightSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn scoped(&self, prefix: &str) -> WeightSet {
        let p = format!("{prefix}.");
        let entries =
            self.entries.iter().filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone()))).collect();
        WeightSet { entries }
    }
}

pub fn export_weights<F: Real>(model: &mut dyn Layer<F>) -> WeightSet {
    let mut entries = BTreeMap::new();
    model.visit_params("", &mut |name, p| {
        let values = p.value.iter().map(|v| v.to_f32().unwrap()).collect();
        entries.insert(name.to_string(), WeightEntry { dims: p.dims.clone(), values });
    });
    WeightSet { entries }
}

/// Outcome of copying a [`WeightSet`] into a model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// Model parameters with no entry of matching name and shape.
    pub unloaded: Vec<String>,
    /// Entries the model has no parameter for.
    pub unused: Vec<String>,
}

/// Copies every entry whose name and shape match a model parameter.
pub fn apply_weights<F: Real>(model: &mut dyn Layer<F>, weights: &WeightSet) -> LoadReport {
    apply_filtered(model, weights, |_| true)
}

fn apply_filtered<F: Real>(model: &mut dyn Layer<F>, weights: &WeightSet, keep: impl Fn(&str) -> bool) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen = BTreeSet::new();
    model.visit_params("", &mut |name, p| {
        if !keep(name) {
            return;
        }
        match weights.entries.get(name) {
            Some(e) if e.dims == p.dims => {
                for (dst, &src) in p.value.iter_mut().zip(&e.values) {
                    *dst = F::lit(src as f64);
                }
                seen.insert(name.to_string());
                report.loaded.push(name.to_string());
            }
            _ => report.unloaded.push(name.to_string()),
        }
    });
    report.unused = weights.entries.keys().filter(|k| !seen.contains(*k)).cloned().collect();
    report
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: Option<usize>,
    /// Selection metric (validation F1 or loss) at `epoch`.
    pub val_metric: Option<f64>,
    #[serde(default)]
    pub metric_name: Option<String>,
    #[serde(default)]
    pub import: Option<ImportReport>,
}

impl CheckpointManifest {
    pub fn new(config: &ModelConfig) -> Self {
        Self { config: config.clone(), seed: config.seed, epoch: None, val_metric: None, metric_name: None, import: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub weights: WeightSet,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &mut dyn Layer<F>, manifest: CheckpointManifest) -> Self {
        Self { manifest, weights: export_weights(model) }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::with_capacity(16 + manifest.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for (name, e) in &self.weights.entries {
            let expected: usize = e.dims.iter().product();
            if expected != e.values.len() {
                return Err(Error::Shape(format!("`{name}` has dims {:?} but {} values", e.dims, e.values.len())));
            }
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u64).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a checkpoint archive (bad magic)".into()));
        }
        let len = r.usize()?;
        let manifest: CheckpointManifest = serde_json::from_slice(r.take(len)?)?;
        let count = r.usize()?;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let len = r.usize()?;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Data("checkpoint entry name is not UTF-8".into()))?;
            let nd = r.usize()?;
            let dims = (0..nd).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Data("checkpoint entry too large".into()))?)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            entries.insert(name, WeightEntry { dims, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Data("trailing bytes after checkpoint entries".into()));
        }
        Ok(Self { manifest, weights: WeightSet { entries } })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Data("checkpoint archive is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn usize(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()) as usize)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Which backbone layers an import filled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub source: String,
    pub loaded_layers: Vec<String>,
    /// Backbone layers left at their random initialization.
    pub unloaded_layers: Vec<String>,
}

impl ImportReport {
    pub fn is_complete(&self) -> bool {
        self.unloaded_layers.is_empty()
    }
}

/// Loads backbone weights from an archive. Attention and head layers keep
/// their fresh initialization. Layers without a same-named, same-shaped entry
/// are listed in the report rather than failing the import.
pub fn import_pretrained<F: Real>(model: &mut ClassifierModel<F>, source: &Pretrained) -> Result<ImportReport> {
    let is_backbone = |n: &str| n.starts_with("backbone.");
    let mut layers: Vec<String> = Vec::new();
    model.visit_params("", &mut |name, _| {
        let l = layer_of(name);
        if is_backbone(name) && layers.last().map(String::as_str) != Some(l) {
            layers.push(l.to_string());
        }
    });
    let path = match source {
        Pretrained::None => {
            return Ok(ImportReport { source: "none".into(), loaded_layers: Vec::new(), unloaded_layers: layers })
        }
        Pretrained::ImagenetImport(p) => p,
    };
    let archive = load_checkpoint(path)?;
    let report = apply_filtered(model, &archive.weights, is_backbone);
    let missing: BTreeSet<&str> = report.unloaded.iter().map(|n| layer_of(n)).collect();
    let (unloaded_layers, loaded_layers) = layers.into_iter().partition(|l| missing.contains(l.as_str()));
    Ok(ImportReport { source: path.display().to_string(), loaded_layers, unloaded_layers })
}
