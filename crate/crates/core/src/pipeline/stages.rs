//! The staged pipeline. Each stage reads upstream artifacts from the cache,
//! writes its own next to a run manifest, and is skipped when neither its
//! configuration nor any upstream manifest changed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::dataset::{labels_for, sample_windows, window_masks, encode_samples, PrepareConfig, SampleSpec, SynthConfig};
use super::manifest::{hash_file, hash_tree, inputs_hash, sha256_hex, RunManifest, Timing, MANIFEST_FILE};
use crate::data::{
    generate_synthetic_trial, list_trial_dirs, read_meta, read_trial, read_trial_labels, split_dataset, write_trial,
    DatasetSplit, SplitRole, TrialMeta, TrialRecording, WORKING_FPS,
};
use crate::encoder::{read_tensor, write_tensor, EncodedInput, EncoderConfig, Image};
use crate::error::{Error, Result};
use crate::focus::{focus_report, FocusPair, FocusReport};
use crate::masks::{read_mask_png, write_mask_png, HumanMask, MaskConfig};
use crate::metrics::OfflineMetrics;
use crate::models::{
    apply_weights, build_classifier, build_encoder_classifier, build_segmenter, frozen_layers, import_pretrained,
    load_checkpoint, save_checkpoint, Backbone, Checkpoint, CheckpointManifest, ClassifierModel, ModelConfig, Pretrained,
    WeightSet,
};
use crate::simulate::{plot_run, run_trial, SimulationConfig, SimulationRun};
use crate::train::{
    evaluate, train_classifier_observed, train_segmenter_observed, EvalReport, SegSample, Task, TrainConfig, TrainOutcome,
};

/// Environment variable that overrides the configured cache root.
pub const CACHE_ENV: &str = "WMD_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Artifact cache root. `WMD_CACHE_DIR` takes precedence.
    pub cache_dir: PathBuf,
    /// Recorded trial directories to use instead of synthesized ones.
    pub data_dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub prepare: PrepareConfig,
    pub encoder: EncoderConfig,
    pub masks: MaskConfig,
    /// Classifier; its input size must match `encoder.input_size`.
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Missing fields take segmenter defaults.
    #[serde(deserialize_with = "seg_model_over_defaults")]
    pub seg_model: ModelConfig,
    /// Missing fields take segmentation-training defaults.
    #[serde(deserialize_with = "train_seg_over_defaults")]
    pub train_seg: TrainConfig,
    pub simulate: SimulationConfig,
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn over_defaults<'de, D, T>(d: D, defaults: T) -> std::result::Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut base = serde_json::to_value(defaults).map_err(serde::de::Error::custom)?;
    merge(&mut base, Value::deserialize(d)?);
    serde_json::from_value(base).map_err(serde::de::Error::custom)
}

fn seg_model_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ModelConfig, D::Error> {
    over_defaults(d, ModelConfig::new(Backbone::Segmenter))
}

fn train_seg_over_defaults<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    over_defaults(d, TrainConfig::segmentation())
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cache_dir: PathBuf::from("wmd-cache"),
            data_dir: None,
            synth: SynthConfig::default(),
            prepare: PrepareConfig::default(),
            encoder: EncoderConfig::default(),
            masks: MaskConfig::default(),
            model: ModelConfig { attention: true, ..ModelConfig::new(Backbone::Residual) },
            train: TrainConfig::classification(),
            seg_model: ModelConfig::new(Backbone::Segmenter),
            train_seg: TrainConfig::segmentation(),
            simulate: SimulationConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.model.backbone.is_classifier() {
            return Err(Error::Config(format!("model.backbone must be a classifier, got {}", self.model.backbone)));
        }
        if self.seg_model.backbone != Backbone::Segmenter {
            return Err(Error::Config(format!("seg_model.backbone must be segmenter, got {}", self.seg_model.backbone)));
        }
        if self.model.input_size != self.encoder.input_size {
            return Err(Error::Config(format!(
                "model.input_size ({}) differs from encoder.input_size ({})",
                self.model.input_size, self.encoder.input_size
            )));
        }
        if self.train.task != Task::Classification || self.train_seg.task != Task::Segmentation {
            return Err(Error::Config("train must be a classification run and train_seg a segmentation run".into()));
        }
        if self.encoder.window_len == 0 || self.encoder.stride == 0 {
            return Err(Error::Config("encoder window length and stride must be positive".into()));
        }
        self.model.validate()?;
        self.seg_model.validate()?;
        self.train.validate()?;
        self.train_seg.validate()
    }

    /// Cache root: `WMD_CACHE_DIR` when set, else `cache_dir`.
    pub fn cache_root(&self) -> PathBuf {
        std::env::var_os(CACHE_ENV).map(PathBuf::from).unwrap_or_else(|| self.cache_dir.clone())
    }

    /// Input sizes encoded and masked: the classifier's and the segmenter's.
    pub fn input_sizes(&self) -> Vec<usize> {
        let mut v = vec![self.encoder.input_size, self.seg_model.input_size];
        v.sort_unstable();
        v.dedup();
        v
    }

    fn encoder_at(&self, size: usize) -> EncoderConfig {
        EncoderConfig { input_size: size, ..self.encoder.clone() }
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("synth".into(), self.synth.seed),
            ("model".into(), self.model.seed),
            ("train".into(), self.train.seed),
            ("seg_model".into(), self.seg_model.seed),
            ("train_seg".into(), self.train_seg.seed),
        ])
    }
}

/// Samples and split produced by `prepare`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub split: DatasetSplit,
    pub trials: Vec<PreparedTrial>,
    pub samples: Vec<SampleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedTrial {
    pub name: String,
    pub participant: u32,
    pub role: SplitRole,
    /// Frames at the working rate.
    pub frames: usize,
}

impl PreparedDataset {
    pub fn samples_of(&self, role: SplitRole) -> Vec<&SampleSpec> {
        self.samples.iter().filter(|s| s.role == role).collect()
    }

    fn by_trial(&self) -> BTreeMap<&str, Vec<SampleSpec>> {
        let mut out: BTreeMap<&str, Vec<SampleSpec>> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.trial.as_str()).or_default().push(s.clone());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: String,
    pub dir: PathBuf,
    /// True when the stage was skipped because its artifacts were current.
    pub up_to_date: bool,
    pub manifest: RunManifest,
}

#[derive(Default)]
struct StageResult {
    outputs: BTreeMap<String, String>,
    summary: Value,
    timing: BTreeMap<String, f64>,
}

/// Frame times of a trial directory after reduction to the working rate,
/// matching what [`load_trial`] yields without decoding any image.
pub fn working_timestamps(dir: &Path, meta: &TrialMeta) -> Result<Vec<f64>> {
    let count = match meta.frame_count {
        Some(n) => n,
        None => fs::read_dir(dir.join("rgb")).map_err(|e| Error::io(dir.join("rgb"), e))?.count(),
    };
    let step = if meta.fps > 1.5 * WORKING_FPS { 2 } else { 1 };
    Ok((0..count).step_by(step).map(|i| i as f64 / meta.fps).collect())
}

/// Reads a trial directory at the working rate.
pub fn load_trial(dir: &Path) -> Result<TrialRecording> {
    let t = read_trial(dir)?;
    Ok(if t.fps > 1.5 * WORKING_FPS { t.downsampled() } else { t })
}

/// Rebuilds a classifier from a checkpoint.
pub fn load_classifier(path: &Path) -> Result<ClassifierModel<f32>> {
    let ckpt = load_checkpoint(path)?;
    let cfg = ckpt.manifest.config.clone();
    let mut model = match cfg.backbone {
        Backbone::EncoderClassifier => build_encoder_classifier(&cfg, None)?,
        _ => build_classifier(&cfg)?,
    };
    let report = apply_weights(&mut model, &ckpt.weights);
    if !report.unloaded.is_empty() {
        return Err(Error::Data(format!("{}: no weights for {}", path.display(), report.unloaded.join(", "))));
    }
    Ok(model)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<String> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).map_err(|e| Error::io(path, e))?)?)
}

fn dir_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Orchestrates the stages over one cache root.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub root: PathBuf,
    progress: Box<dyn FnMut(&str)>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, root: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, root: root.into(), progress: Box::new(|_| {}) })
    }

    /// Receives one line per notable event (stage skipped, epoch finished).
    pub fn with_progress(mut self, f: impl FnMut(&str) + 'static) -> Self {
        self.progress = Box::new(f);
        self
    }

    fn say(&mut self, msg: &str) {
        (self.progress)(msg)
    }

    pub fn trials_dir(&self) -> PathBuf {
        self.config.data_dir.clone().unwrap_or_else(|| self.root.join("trials"))
    }

    /// Name of an encoded-input or mask set, e.g. `add_crop_96`.
    pub fn input_key(&self, size: usize) -> String {
        let e = &self.config.encoder;
        format!("{}_{}_{size}", e.form.name(), if e.crop { "crop" } else { "full" })
    }

    pub fn run_name(&self, task: Task) -> String {
        match task {
            Task::Classification => format!("cls_{}", self.config.model.backbone),
            Task::Segmentation => format!("seg_{}", self.config.seg_model.backbone),
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        match stage {
            "synth" => self.root.join("trials"),
            "train_cls" => self.root.join("runs").join(self.run_name(Task::Classification)),
            "train_seg" => self.root.join("runs").join(self.run_name(Task::Segmentation)),
            "eval" | "focus" | "simulate" => self.root.join(stage).join(self.run_name(Task::Classification)),
            other => self.root.join(other),
        }
    }

    /// Manifest of a finished upstream stage.
    pub fn manifest(&self, stage: &str) -> Result<RunManifest> {
        let dir = self.stage_dir(stage);
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(Error::Pipeline { stage: stage.to_string(), missing: dir.join(MANIFEST_FILE).display().to_string() });
        }
        RunManifest::read(&dir)
    }

    fn run_stage(
        &mut self,
        stage: &str,
        config: Value,
        upstream: &[&RunManifest],
        body: impl FnOnce(&mut Self, &Path) -> Result<StageResult>,
    ) -> Result<StageOutcome> {
        let dir = self.stage_dir(stage);
        let inputs = inputs_hash(&config, upstream);
        if let Ok(existing) = RunManifest::read(&dir) {
            if existing.is_current(&dir, &inputs) {
                self.say(&format!("{stage}: up to date"));
                return Ok(StageOutcome { stage: stage.into(), dir, up_to_date: true, manifest: existing });
            }
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let started = Instant::now();
        let result = body(self, &dir)?;
        let manifest = RunManifest {
            stage: stage.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config,
            seeds: self.config.seeds(),
            inputs_hash: inputs,
            outputs: result.outputs,
            summary: result.summary,
            timing: Timing { elapsed_s: started.elapsed().as_secs_f64(), detail: result.timing },
        };
        manifest.write(&dir)?;
        self.say(&format!("{stage}: done in {:.1}s", manifest.timing.elapsed_s));
        Ok(StageOutcome { stage: stage.into(), dir, up_to_date: false, manifest })
    }

    /// Synthesizes every configured trial into `trials/`.
    pub fn synth(&mut self) -> Result<StageOutcome> {
        let cfg = self.config.synth.clone();
        let trials = cfg.trials()?;
        self.run_stage("synth", json!({ "synth": cfg }), &[], |p, dir| {
            let mut out = StageResult::default();
            for (i, t) in trials.iter().enumerate() {
                let trial = generate_synthetic_trial(t, cfg.seed)?;
                let path = write_trial(dir, &trial)?;
                let name = dir_name(&path);
                out.outputs.insert(name.clone(), hash_tree(&path)?);
                p.say(&format!("synth: {}/{} {name}", i + 1, trials.len()));
            }
            out.summary = json!({ "trials": trials.len() });
            Ok(out)
        })
    }

    /// Splits participants and picks the balanced sample windows.
    pub fn prepare(&mut self) -> Result<StageOutcome> {
        let source = self.trials_dir();
        let (upstream, source_hash) = match &self.config.data_dir {
            None => (Some(self.manifest("synth")?), None),
            Some(d) => (None, Some(hash_tree(d)?)),
        };
        let config = json!({
            "prepare": self.config.prepare,
            "window_len": self.config.encoder.window_len,
            "data_dir": self.config.data_dir,
            "data_hash": source_hash,
        });
        let cfg = self.config.prepare.clone();
        let window_len = self.config.encoder.window_len;
        self.run_stage("prepare", config, &upstream.iter().collect::<Vec<_>>(), |_, dir| {
            let dirs = list_trial_dirs(&source)?;
            if dirs.is_empty() {
                return Err(Error::Data(format!("no trial directories under {}", source.display())));
            }
            let metas = dirs.iter().map(|d| read_meta(d)).collect::<Result<Vec<_>>>()?;
            let mut ids: Vec<u32> = metas.iter().map(|m| m.participant).collect();
            ids.sort_unstable();
            ids.dedup();
            let split = split_dataset(&ids, cfg.split)?;
            let (mut trials, mut samples) = (Vec::new(), Vec::new());
            for (d, meta) in dirs.iter().zip(&metas) {
                let name = dir_name(d);
                let role = super::dataset::split_role(&split, meta.participant)?;
                let times = working_timestamps(d, meta)?;
                let (joy, vel) = read_trial_labels(d)?;
                let labels = labels_for(cfg.labels, &joy, &vel)?;
                samples.extend(sample_windows(&name, meta.participant, &times, &labels, role, &cfg, window_len)?);
                trials.push(PreparedTrial { name, participant: meta.participant, role, frames: times.len() });
            }
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for s in &samples {
                *counts.entry(format!("{:?}/{}", s.role, s.class.name()).to_lowercase()).or_default() += 1;
            }
            let data = PreparedDataset { split, trials, samples };
            let mut out = StageResult::default();
            out.outputs.insert("samples.json".into(), write_json(&dir.join("samples.json"), &data)?);
            out.summary = json!({ "trials": data.trials.len(), "samples": counts });
            Ok(out)
        })
    }

    pub fn prepared(&self) -> Result<PreparedDataset> {
        self.manifest("prepare")?;
        read_json(&self.stage_dir("prepare").join("samples.json"))
    }

    /// Encodes every sample window at each input size.
    pub fn encode(&mut self) -> Result<StageOutcome> {
        let up = self.manifest("prepare")?;
        let sizes = self.config.input_sizes();
        let config = json!({ "encoder": self.config.encoder, "sizes": sizes });
        self.run_stage("encode", config, &[&up], |p, dir| {
            let data = p.prepared()?;
            let keys: Vec<String> = sizes.iter().map(|&s| p.input_key(s)).collect();
            for k in &keys {
                fs::create_dir_all(dir.join(k)).map_err(|e| Error::io(dir.join(k), e))?;
            }
            let groups = data.by_trial();
            for (i, (name, specs)) in groups.iter().enumerate() {
                let trial = load_trial(&p.trials_dir().join(name))?;
                for (&size, key) in sizes.iter().zip(&keys) {
                    for (spec, input) in specs.iter().zip(encode_samples(&trial, specs, &p.config.encoder_at(size))?) {
                        let img = &input.image;
                        write_tensor(&dir.join(key).join(format!("{}.bin", spec.id)), &[img.height, img.width, img.channels], &img.data)?;
                    }
                }
                p.say(&format!("encode: {}/{} {name}", i + 1, groups.len()));
            }
            let mut out = StageResult::default();
            for k in &keys {
                out.outputs.insert(k.clone(), hash_tree(&dir.join(k))?);
            }
            out.summary = json!({ "samples": data.samples.len(), "sets": keys });
            Ok(out)
        })
    }

    /// Encoded inputs of one split at `size`.
    pub fn load_inputs(&self, data: &PreparedDataset, role: SplitRole, size: usize) -> Result<Vec<EncodedInput>> {
        let dir = self.stage_dir("encode").join(self.input_key(size));
        if !dir.exists() {
            return Err(Error::Pipeline { stage: "encode".into(), missing: dir.display().to_string() });
        }
        data.samples_of(role)
            .into_iter()
            .map(|s| {
                let (dims, values) = read_tensor(&dir.join(format!("{}.bin", s.id)))?;
                let [h, w, c] = dims[..] else {
                    return Err(Error::Shape(format!("{}: expected a 3-d tensor, got {dims:?}", s.id)));
                };
                Ok(EncodedInput {
                    image: Image::from_vec(h, w, c, values)?,
                    form: self.config.encoder.form,
                    cropped: self.config.encoder.crop,
                    window: s.window,
                    class: Some(s.class),
                })
            })
            .collect()
    }

    /// Human masks of every sample window at each input size, as 1-bit PNGs.
    /// Windows touching a corrupted frame are listed in `corrupted.json`.
    pub fn masks(&mut self) -> Result<StageOutcome> {
        let up = self.manifest("prepare")?;
        let sizes = self.config.input_sizes();
        let config = json!({ "encoder": self.config.encoder, "masks": self.config.masks, "sizes": sizes });
        self.run_stage("masks", config, &[&up], |p, dir| {
            let data = p.prepared()?;
            let keys: Vec<String> = sizes.iter().map(|&s| p.input_key(s)).collect();
            for k in &keys {
                fs::create_dir_all(dir.join(k)).map_err(|e| Error::io(dir.join(k), e))?;
            }
            let encoders: Vec<EncoderConfig> = sizes.iter().map(|&s| p.config.encoder_at(s)).collect();
            let encoder_refs: Vec<&EncoderConfig> = encoders.iter().collect();
            let mut corrupted: Vec<Vec<String>> = vec![Vec::new(); keys.len()];
            let mut fractions: Vec<f64> = vec![0.0; keys.len()];
            let groups = data.by_trial();
            for (i, (name, specs)) in groups.iter().enumerate() {
                let trial = load_trial(&p.trials_dir().join(name))?;
                for (spec, per_size) in specs.iter().zip(window_masks(&trial, specs, &encoder_refs, &p.config.masks)?) {
                    for (k, m) in per_size.iter().enumerate() {
                        if m.corrupted {
                            corrupted[k].push(spec.id.clone());
                        } else {
                            fractions[k] += m.fraction();
                            write_mask_png(&dir.join(&keys[k]).join(format!("{}.png", spec.id)), m.size, m.size, &m.mask)?;
                        }
                    }
                }
                p.say(&format!("masks: {}/{} {name}", i + 1, groups.len()));
            }
            let mut out = StageResult::default();
            let mut summary = serde_json::Map::new();
            for (k, key) in keys.iter().enumerate() {
                write_json(&dir.join(key).join("corrupted.json"), &corrupted[k])?;
                out.outputs.insert(key.clone(), hash_tree(&dir.join(key))?);
                let clean = data.samples.len() - corrupted[k].len();
                summary.insert(
                    key.clone(),
                    json!({
                        "masks": clean,
                        "corrupted": corrupted[k].len(),
                        "mean_fraction": if clean > 0 { fractions[k] / clean as f64 } else { 0.0 },
                    }),
                );
            }
            out.summary = Value::Object(summary);
            Ok(out)
        })
    }

    /// Human masks of one split at `size`; corrupted windows come back flagged.
    pub fn load_masks(&self, data: &PreparedDataset, role: SplitRole, size: usize) -> Result<Vec<HumanMask>> {
        let dir = self.stage_dir("masks").join(self.input_key(size));
        if !dir.exists() {
            return Err(Error::Pipeline { stage: "masks".into(), missing: dir.display().to_string() });
        }
        let corrupted: Vec<String> = read_json(&dir.join("corrupted.json"))?;
        data.samples_of(role)
            .into_iter()
            .map(|s| {
                if corrupted.contains(&s.id) {
                    return Ok(HumanMask { size, mask: vec![false; size * size], corrupted: true, source_window: s.window.start });
                }
                let m = read_mask_png(&dir.join(format!("{}.png", s.id)))?;
                if m.width != size || m.height != size {
                    return Err(Error::Shape(format!("{}: {}x{} mask, expected {size}x{size}", s.id, m.width, m.height)));
                }
                Ok(HumanMask { size, mask: m.data, corrupted: false, source_window: s.window.start })
            })
            .collect()
    }

    fn seg_samples(&self, data: &PreparedDataset, role: SplitRole) -> Result<Vec<SegSample>> {
        let size = self.config.seg_model.input_size;
        let inputs = self.load_inputs(data, role, size)?;
        let masks = self.load_masks(data, role, size)?;
        Ok(inputs
            .into_iter()
            .zip(masks)
            .filter(|(_, m)| !m.corrupted)
            .map(|(i, m)| SegSample { image: i.image, mask: m.mask })
            .collect())
    }

    /// Trains the classifier or the segmenter into `runs/<task>_<backbone>/`
    /// (`manifest.json`, `log.csv`, `best.ckpt`, `last.ckpt`).
    pub fn train(&mut self, task: Task) -> Result<StageOutcome> {
        match task {
            Task::Classification => self.train_classifier(),
            Task::Segmentation => self.train_segmenter(),
        }
    }

    fn train_classifier(&mut self) -> Result<StageOutcome> {
        let mut upstream = vec![self.manifest("encode")?];
        let transfer = self.config.model.backbone == Backbone::EncoderClassifier;
        if transfer {
            upstream.push(self.manifest("train_seg")?);
        }
        let model_cfg = self.config.model.clone();
        let train_cfg = self.config.train.clone();
        let key = self.input_key(model_cfg.input_size);
        let config = json!({ "model": model_cfg, "train": train_cfg, "inputs": key });
        self.run_stage("train_cls", config, &upstream.iter().collect::<Vec<_>>(), |p, dir| {
            let data = p.prepared()?;
            let train = p.load_inputs(&data, SplitRole::Train, model_cfg.input_size)?;
            let val = p.load_inputs(&data, SplitRole::Val, model_cfg.input_size)?;
            let mut init = json!("he_normal");
            let mut model = if transfer {
                let seg = load_checkpoint(&p.stage_dir("train_seg").join("best.ckpt"))?;
                init = json!({ "segmenter_transfer": p.run_name(Task::Segmentation) });
                build_encoder_classifier::<f32>(&model_cfg, Some(&seg.weights))?
            } else {
                build_classifier::<f32>(&model_cfg)?
            };
            let mut import = None;
            if model_cfg.pretrained != Pretrained::None {
                let report = import_pretrained(&mut model, &model_cfg.pretrained)?;
                init = json!({ "import": report });
                import = Some(report);
            }
            let frozen = frozen_layers(&mut model);
            let outcome = train_classifier_observed(&mut model, &train, &val, &train_cfg, &mut |r| {
                (p.progress)(&format!(
                    "train_cls: epoch {} loss {:.4} acc {:.3} val_loss {:.4} val_f1 {:.3} lr {:.2e}",
                    r.epoch, r.train_loss, r.train_metric, r.val_loss, r.val_metric, r.lr
                ))
            })?;
            let mut manifest = CheckpointManifest::new(&model_cfg);
            manifest.import = import;
            let mut out = write_run(dir, &outcome, manifest)?;
            out.summary = json!({
                "train_samples": train.len(),
                "val_samples": val.len(),
                "best_epoch": outcome.log.best_epoch,
                "best_val_f1": outcome.log.best_value,
                "epochs": outcome.log.epochs.len(),
                "frozen_layers": frozen,
                "init": init,
            });
            Ok(out)
        })
    }

    fn train_segmenter(&mut self) -> Result<StageOutcome> {
        let upstream = [self.manifest("encode")?, self.manifest("masks")?];
        let model_cfg = self.config.seg_model.clone();
        let train_cfg = self.config.train_seg.clone();
        let key = self.input_key(model_cfg.input_size);
        let config = json!({ "model": model_cfg, "train": train_cfg, "inputs": key });
        self.run_stage("train_seg", config, &[&upstream[0], &upstream[1]], |p, dir| {
            let data = p.prepared()?;
            let train = p.seg_samples(&data, SplitRole::Train)?;
            let val = p.seg_samples(&data, SplitRole::Val)?;
            let mut model = build_segmenter::<f32>(&model_cfg)?;
            let outcome = train_segmenter_observed(&mut model, &train, &val, &train_cfg, &mut |r| {
                (p.progress)(&format!(
                    "train_seg: epoch {} loss {:.4} dice {:.3} val_loss {:.4} val_dice {:.3} lr {:.2e}",
                    r.epoch, r.train_loss, r.train_metric, r.val_loss, r.val_metric, r.lr
                ))
            })?;
            let mut out = write_run(dir, &outcome, CheckpointManifest::new(&model_cfg))?;
            let best = outcome.log.best().expect("at least one epoch");
            out.summary = json!({
                "train_samples": train.len(),
                "val_samples": val.len(),
                "best_epoch": outcome.log.best_epoch,
                "best_val_loss": outcome.log.best_value,
                "best_val_dice": best.val_metric,
                "epochs": outcome.log.epochs.len(),
            });
            Ok(out)
        })
    }

    fn classifier(&self) -> Result<ClassifierModel<f32>> {
        load_classifier(&self.stage_dir("train_cls").join("best.ckpt"))
    }

    /// Offline metrics of the selected classifier on the validation and test
    /// splits.
    pub fn eval(&mut self) -> Result<StageOutcome> {
        let upstream = [self.manifest("train_cls")?, self.manifest("encode")?];
        let config = json!({ "run": self.run_name(Task::Classification), "inputs": self.input_key(self.config.encoder.input_size) });
        self.run_stage("eval", config, &[&upstream[0], &upstream[1]], |p, dir| {
            let data = p.prepared()?;
            let mut model = p.classifier()?;
            let classes = model.config().num_classes;
            let mut out = StageResult::default();
            let mut summary = serde_json::Map::new();
            for (role, name) in [(SplitRole::Val, "val"), (SplitRole::Test, "test")] {
                let inputs = p.load_inputs(&data, role, p.config.encoder.input_size)?;
                let report = evaluate(&mut model, &inputs, classes)?;
                out.outputs.insert(format!("{name}.json"), write_json(&dir.join(format!("{name}.json")), &report)?);
                let m = &report.metrics;
                summary.insert(name.into(), json!({ "samples": report.samples, "top1": m.top1, "acc": m.acc, "f1": m.f1 }));
            }
            out.summary = Value::Object(summary);
            Ok(out)
        })
    }

    /// grad-CAM agreement with the human masks on the test split, next to the
    /// uniform-heatmap baseline for the same masks.
    pub fn focus(&mut self) -> Result<StageOutcome> {
        let upstream = [self.manifest("train_cls")?, self.manifest("encode")?, self.manifest("masks")?];
        let size = self.config.encoder.input_size;
        let config = json!({ "run": self.run_name(Task::Classification), "inputs": self.input_key(size) });
        self.run_stage("focus", config, &[&upstream[0], &upstream[1], &upstream[2]], |p, dir| {
            let data = p.prepared()?;
            let mut model = p.classifier()?;
            let inputs = p.load_inputs(&data, SplitRole::Test, size)?;
            let masks = p.load_masks(&data, SplitRole::Test, size)?;
            let clean: Vec<f64> = masks.iter().filter(|m| !m.corrupted).map(HumanMask::fraction).collect();
            let pairs: Vec<FocusPair> = inputs.into_iter().zip(masks).map(|(input, mask)| FocusPair { input, mask }).collect();
            let report = focus_report(&mut model, &pairs)?;
            report.write_csv(&dir.join("focus.csv"))?;
            report.write_json(&dir.join("focus.json"))?;
            let f = if clean.is_empty() { 0.0 } else { clean.iter().sum::<f64>() / clean.len() as f64 };
            let baseline = 2.0 * f / (1.0 + f);
            let mut out = StageResult::default();
            for file in ["focus.csv", "focus.json"] {
                out.outputs.insert(file.into(), hash_file(&dir.join(file))?);
            }
            let dice = report.rows.first().map_or(0.0, |r| r.dice_mean);
            out.summary = json!({
                "pairs": pairs.len(),
                "mean_mask_fraction": f,
                "uniform_baseline_dice": baseline,
                "dice_mean": dice,
                "dice_over_baseline": if baseline > 0.0 { dice / baseline } else { 0.0 },
            });
            Ok(out)
        })
    }

    /// Streams trials through the classifier and the debouncer. Without
    /// explicit `trials`, every test-split trial is replayed.
    pub fn simulate(&mut self, trials: Option<&[PathBuf]>, plot: bool) -> Result<StageOutcome> {
        let mut upstream = vec![self.manifest("train_cls")?];
        let dirs: Vec<PathBuf> = match trials {
            Some(t) => t.to_vec(),
            None => {
                upstream.push(self.manifest("prepare")?);
                let data = self.prepared()?;
                data.trials.iter().filter(|t| t.role == SplitRole::Test).map(|t| self.trials_dir().join(&t.name)).collect()
            }
        };
        let explicit = match trials {
            Some(t) => Some(t.iter().map(|d| Ok((dir_name(d), hash_tree(d)?))).collect::<Result<BTreeMap<_, _>>>()?),
            None => None,
        };
        let config = json!({
            "run": self.run_name(Task::Classification),
            "simulate": self.config.simulate,
            "encoder": self.config.encoder,
            "trials": explicit,
            "plot": plot,
        });
        self.run_stage("simulate", config, &upstream.iter().collect::<Vec<_>>(), |p, dir| {
            let mut model = p.classifier()?;
            let mut out = StageResult::default();
            let mut summary = serde_json::Map::new();
            let mut all_latencies = Vec::new();
            for d in &dirs {
                let name = dir_name(d);
                let trial = load_trial(d)?;
                let run = run_trial(&trial, &mut model, &p.config.encoder, &p.config.simulate)?;
                write_json(&dir.join(format!("{name}.json")), &run)?;
                let stable = serde_json::to_vec(&run.without_timing())?;
                out.outputs.insert(format!("{name}.json"), sha256_hex(&stable));
                if plot {
                    plot_run(&dir.join(format!("{name}.png")), &run)?;
                    out.outputs.insert(format!("{name}.png"), hash_file(&dir.join(format!("{name}.png")))?);
                }
                out.timing.insert(format!("{name}.median_latency_s"), run.median_latency());
                all_latencies.extend_from_slice(&run.latencies_s);
                summary.insert(name.clone(), simulation_summary(&run));
                p.say(&format!("simulate: {name} median latency {:.1} ms", 1e3 * run.median_latency()));
            }
            all_latencies.sort_by(f64::total_cmp);
            if let Some(m) = all_latencies.get(all_latencies.len() / 2) {
                out.timing.insert("median_latency_s".into(), *m);
            }
            out.summary = Value::Object(summary);
            Ok(out)
        })
    }

    /// Collects eval, focus and simulation results into `report/`.
    pub fn report(&mut self) -> Result<StageOutcome> {
        let mut upstream = vec![self.manifest("eval")?];
        for stage in ["focus", "simulate"] {
            if let Ok(m) = self.manifest(stage) {
                upstream.push(m);
            }
        }
        let config = json!({ "run": self.run_name(Task::Classification) });
        self.run_stage("report", config, &upstream.iter().collect::<Vec<_>>(), |p, dir| {
            let eval_dir = p.stage_dir("eval");
            let report = Report {
                run: p.run_name(Task::Classification),
                val: read_json::<EvalReport>(&eval_dir.join("val.json"))?.metrics,
                test: read_json::<EvalReport>(&eval_dir.join("test.json"))?.metrics,
                focus: upstream
                    .iter()
                    .any(|m| m.stage == "focus")
                    .then(|| read_json::<FocusReport>(&p.stage_dir("focus").join("focus.json")))
                    .transpose()?,
                focus_summary: upstream.iter().find(|m| m.stage == "focus").map(|m| m.summary.clone()),
                simulation: upstream.iter().find(|m| m.stage == "simulate").map(|m| m.summary.clone()),
            };
            let latency = upstream.iter().find(|m| m.stage == "simulate").and_then(|m| m.timing.detail.get("median_latency_s").copied());
            let mut out = StageResult::default();
            out.outputs.insert("report.json".into(), write_json(&dir.join("report.json"), &report)?);
            fs::write(dir.join("report.md"), report.render(latency)).map_err(|e| Error::io(dir.join("report.md"), e))?;
            out.outputs.insert("report.md".into(), sha256_hex(report.render(None).as_bytes()));
            out.summary = json!({ "test_f1": report.test.f1, "test_top1": report.test.top1 });
            Ok(out)
        })
    }

    /// Every stage in order. Synthesis is skipped when `data_dir` is set and
    /// the segmenter is trained only for the transfer classifier.
    pub fn run_all(&mut self) -> Result<Vec<StageOutcome>> {
        let mut out = Vec::new();
        if self.config.data_dir.is_none() {
            out.push(self.synth()?);
        }
        out.push(self.prepare()?);
        out.push(self.encode()?);
        out.push(self.masks()?);
        if self.config.model.backbone == Backbone::EncoderClassifier {
            out.push(self.train(Task::Segmentation)?);
        }
        out.push(self.train(Task::Classification)?);
        out.push(self.eval()?);
        out.push(self.focus()?);
        out.push(self.simulate(None, false)?);
        out.push(self.report()?);
        Ok(out)
    }
}

fn write_run(dir: &Path, outcome: &TrainOutcome, manifest: CheckpointManifest) -> Result<StageResult> {
    outcome.log.write_csv(&dir.join("log.csv"))?;
    let metric = outcome.log.selection_metric().to_string();
    let ckpt = |weights: &WeightSet, epoch: usize| Checkpoint {
        manifest: CheckpointManifest {
            epoch: Some(epoch),
            val_metric: outcome.log.epochs.get(epoch - 1).map(|e| match outcome.log.task {
                Task::Classification => e.val_metric,
                Task::Segmentation => e.val_loss,
            }),
            metric_name: Some(metric.clone()),
            ..manifest.clone()
        },
        weights: weights.clone(),
    };
    save_checkpoint(&dir.join("best.ckpt"), &ckpt(&outcome.best, outcome.log.best_epoch))?;
    save_checkpoint(&dir.join("last.ckpt"), &ckpt(&outcome.last, outcome.log.epochs.len()))?;
    let mut out = StageResult::default();
    for file in ["log.csv", "best.ckpt", "last.ckpt"] {
        out.outputs.insert(file.into(), hash_file(&dir.join(file))?);
    }
    Ok(out)
}

fn simulation_summary(run: &SimulationRun) -> Value {
    let last = run.online.last();
    let agree = run.post.iter().zip(&run.gt).filter(|(a, b)| a == b).count();
    json!({
        "windows": run.times.len(),
        "post_agreement": agree as f64 / run.times.len().max(1) as f64,
        "ia": last.map(|s| s.ia),
        "wia": last.map(|s| s.wia),
        "ip": last.map(|s| s.ip),
        "cip": last.map(|s| s.cip),
        "delays": run.delays.transitions,
    })
}

/// Headline results of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run: String,
    pub val: OfflineMetrics,
    pub test: OfflineMetrics,
    pub focus: Option<FocusReport>,
    pub focus_summary: Option<Value>,
    pub simulation: Option<Value>,
}

impl Report {
    /// Markdown rendering. The latency line appears only when given, so the
    /// rest of the text stays reproducible.
    pub fn render(&self, median_latency_s: Option<f64>) -> String {
        let mut s = format!("# Report: {}\n\n## Offline metrics\n\n", self.run);
        s += "| split | top-1 | ACC | precision | recall | F1 |\n|---|---|---|---|---|---|\n";
        for (name, m) in [("val", &self.val), ("test", &self.test)] {
            s += &format!("| {name} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n", m.top1, m.acc, m.precision, m.recall, m.f1);
        }
        if let Some(f) = &self.focus {
            s += "\n## Focus\n\n| form | cropped | n | Dice | IoU | soft Dice |\n|---|---|---|---|---|---|\n";
            for r in &f.rows {
                s += &format!(
                    "| {} | {} | {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} |\n",
                    r.form.name(),
                    r.cropped,
                    r.count,
                    r.dice_mean,
                    r.dice_std,
                    r.iou_mean,
                    r.iou_std,
                    r.soft_dice_mean,
                    r.soft_dice_std
                );
            }
            if let Some(b) = self.focus_summary.as_ref().and_then(|v| v.get("uniform_baseline_dice")).and_then(Value::as_f64) {
                s += &format!("\nUniform-heatmap baseline Dice: {b:.4}\n");
            }
        }
        if let Some(Value::Object(trials)) = &self.simulation {
            s += "\n## Simulation\n\n| trial | windows | IA | wIA | IP | cIP | delays (s) |\n|---|---|---|---|---|---|---|\n";
            for (name, v) in trials {
                let num = |k: &str| v.get(k).and_then(Value::as_f64).map_or("-".into(), |x| format!("{x:.4}"));
                let delays: Vec<String> = v
                    .get("delays")
                    .and_then(Value::as_array)
                    .map(|a| {
                        a.iter()
                            .map(|d| d.get("delay").and_then(Value::as_f64).map_or("missed".into(), |x| format!("{x:+.2}")))
                            .collect()
                    })
                    .unwrap_or_default();
                s += &format!(
                    "| {name} | {} | {} | {} | {} | {} | {} |\n",
                    v.get("windows").and_then(Value::as_u64).unwrap_or(0),
                    num("ia"),
                    num("wia"),
                    num("ip"),
                    num("cip"),
                    delays.join(" ")
                );
            }
        }
        if let Some(l) = median_latency_s {
            s += &format!("\nMedian per-window latency: {:.1} ms\n", 1e3 * l);
        }
        s
    }
}
