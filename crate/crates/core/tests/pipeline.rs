use std::path::Path;

use wmd::data::{Circuit, SplitLayout, SyntheticSceneConfig};
use wmd::models::{Backbone, ModelConfig};
use wmd::pipeline::*;
use wmd::train::{Task, TrainConfig};
use wmd::Error;

fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.synth = SynthConfig {
        participants: 3,
        speeds: vec![1.0],
        circuits: vec![Circuit::RightWide],
        repetitions: 1,
        seed: 5,
        scene: SyntheticSceneConfig { size: 32, duration_scale: 0.15, ..Default::default() },
    };
    cfg.prepare = PrepareConfig {
        frames_per_segment: 2,
        split: SplitLayout::Ratios { train: 0.34, val: 0.33, test: 0.33 },
        ..Default::default()
    };
    cfg.encoder.input_size = 32;
    cfg.model = ModelConfig { scale: 0.0625, input_size: 32, ..ModelConfig::new(Backbone::VggStyle) };
    cfg.seg_model = ModelConfig { scale: 0.0625, input_size: 32, ..ModelConfig::new(Backbone::Segmenter) };
    cfg.train = TrainConfig { max_epochs: 2, batch_size: 8, ..TrainConfig::classification() };
    cfg.train_seg = TrainConfig { max_epochs: 1, batch_size: 8, ..TrainConfig::segmentation() };
    cfg
}

fn hashes(outcomes: &[StageOutcome]) -> Vec<(String, String)> {
    outcomes.iter().map(|o| (o.stage.clone(), o.manifest.content_hash())).collect()
}

fn quiet(cfg: PipelineConfig, root: &Path) -> Pipeline {
    Pipeline::new(cfg, root).unwrap()
}

#[test]
fn full_run_is_cached_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let mut p = quiet(tiny_config(), a.path());
    let first = p.run_all().unwrap();
    assert!(first.iter().all(|o| !o.up_to_date));
    for f in ["runs/cls_vgg_style/log.csv", "runs/cls_vgg_style/best.ckpt", "runs/cls_vgg_style/last.ckpt", "report/report.md"] {
        assert!(a.path().join(f).exists(), "{f}");
    }

    let second = p.run_all().unwrap();
    assert!(second.iter().all(|o| o.up_to_date));
    assert_eq!(hashes(&first), hashes(&second));

    let b = tempfile::tempdir().unwrap();
    let third = quiet(tiny_config(), b.path()).run_all().unwrap();
    assert_eq!(hashes(&first), hashes(&third));
}

#[test]
fn config_change_reruns_only_downstream() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = quiet(tiny_config(), dir.path());
    p.synth().unwrap();
    p.prepare().unwrap();
    p.encode().unwrap();
    p.config.encoder.crop = false;
    assert!(p.prepare().unwrap().up_to_date);
    assert!(!p.encode().unwrap().up_to_date);
    assert!(dir.path().join("encode/add_full_32").exists());
}

#[test]
fn missing_upstream_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = quiet(tiny_config(), dir.path());
    match p.encode() {
        Err(Error::Pipeline { stage, .. }) => assert_eq!(stage, "prepare"),
        other => panic!("expected a pipeline error, got {other:?}"),
    }
    assert!(matches!(p.train(Task::Classification), Err(Error::Pipeline { .. })));
    assert!(matches!(p.report(), Err(Error::Pipeline { .. })));
}

#[test]
fn transfer_classifier_needs_and_uses_the_segmenter() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.model = ModelConfig { scale: 0.0625, input_size: 32, ..ModelConfig::new(Backbone::EncoderClassifier) };
    cfg.train.max_epochs = 1;
    let mut p = quiet(cfg, dir.path());
    p.synth().unwrap();
    p.prepare().unwrap();
    p.encode().unwrap();
    p.masks().unwrap();
    assert!(matches!(p.train(Task::Classification), Err(Error::Pipeline { ref stage, .. }) if stage == "train_seg"));
    p.train(Task::Segmentation).unwrap();
    let cls = p.train(Task::Classification).unwrap();
    assert_eq!(cls.manifest.summary["frozen_layers"].as_array().unwrap().len(), 16);
}

#[test]
fn toml_config_round_trips() {
    let cfg = tiny_config();
    let text = cfg.to_toml_string().unwrap();
    assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    let partial = PipelineConfig::from_toml_str("[encoder]\nform = \"dif\"\ninput_size = 64\n[model]\ninput_size = 64\n").unwrap();
    assert_eq!(partial.encoder.input_size, 64);
    assert!(partial.validate().is_ok());
    let mismatched = PipelineConfig::from_toml_str("[encoder]\ninput_size = 64\n").unwrap();
    assert!(matches!(mismatched.validate(), Err(Error::Config(_))));
    assert!(matches!(PipelineConfig::from_toml_str("[encoder]\nform = \"sum\"\n"), Err(Error::Config(_))));
    let seg = PipelineConfig::from_toml_str("[train_seg]\nmax_epochs = 3\n[train_seg.augment]\nshift = 0.0\n").unwrap();
    assert_eq!(seg.train_seg.task, Task::Segmentation);
    assert_eq!(seg.train_seg.learning_rate, TrainConfig::segmentation().learning_rate);
    assert_eq!(seg.train_seg.augment.blur_prob, TrainConfig::segmentation().augment.blur_prob);
    assert_eq!(seg.train_seg.augment.shift, 0.0);
    assert_eq!(seg.seg_model.backbone, Backbone::Segmenter);
}
