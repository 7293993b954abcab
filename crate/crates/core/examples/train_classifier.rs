//! Trains a small residual classifier with channel attention on in-memory
//! synthetic windows and reports validation metrics.
//!
//! ```text
//! cargo run --release --example train_classifier -- [epochs]
//! ```

use std::error::Error;

use wmd::data::{generate_synthetic_trial, split_dataset, Circuit, SplitLayout, SplitRole, SyntheticSceneConfig};
use wmd::encoder::{AugmentConfig, EncoderConfig};
use wmd::metrics::confusion;
use wmd::models::{build_classifier, Backbone, ModelConfig};
use wmd::pipeline::{encode_samples, split_role, trial_samples, PrepareConfig};
use wmd::train::{evaluate, train_classifier_observed, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(12);
    let encoder = EncoderConfig { input_size: 96, ..Default::default() };
    let prepare = PrepareConfig { frames_per_segment: 6, split: SplitLayout::Ratios { train: 0.6, val: 0.2, test: 0.2 }, ..Default::default() };
    let split = split_dataset(&[1, 2, 3, 4, 5], prepare.split)?;

    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (participant_id, gait_speed) in (1..=5).flat_map(|p| [0.5, 0.7, 1.0].map(|s| (p, s))) {
        for circuit in Circuit::ALL {
            let scene = SyntheticSceneConfig { participant_id, circuit, gait_speed, size: 128, duration_scale: 0.35, ..Default::default() };
            let trial = generate_synthetic_trial(&scene, 7)?.downsampled();
            let role = split_role(&split, participant_id)?;
            let specs = trial_samples(&trial, role, &prepare, encoder.window_len)?;
            let inputs = encode_samples(&trial, &specs, &encoder)?;
            match role {
                SplitRole::Train => train.extend(inputs),
                SplitRole::Val => val.extend(inputs),
                SplitRole::Test => {}
            }
        }
    }
    println!("{} training and {} validation windows", train.len(), val.len());

    let model_cfg = ModelConfig { attention: true, scale: 0.25, input_size: encoder.input_size, ..ModelConfig::new(Backbone::Residual) };
    let mut model = build_classifier::<f32>(&model_cfg)?;
    let train_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: epochs,
        augment: AugmentConfig { shift: 0.0, zoom: (1.0, 1.0), blur_prob: 0.0, ..Default::default() },
        ..TrainConfig::classification()
    };
    let outcome = train_classifier_observed(&mut model, &train, &val, &train_cfg, &mut |r| {
        println!(
            "epoch {:2}  loss {:.4}  acc {:.3}  val loss {:.4}  val F1 {:.3}  lr {:.1e}",
            r.epoch, r.train_loss, r.train_metric, r.val_loss, r.val_metric, r.lr
        )
    })?;
    println!("kept epoch {} (val F1 {:.3})", outcome.log.best_epoch, outcome.log.best_value);

    let report = evaluate(&mut model, &val, model_cfg.num_classes)?;
    let m = &report.metrics;
    println!("validation: top-1 {:.3}  acc {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}", m.top1, m.acc, m.precision, m.recall, m.f1);
    let c = confusion(&report.predictions, &report.labels, model_cfg.num_classes)?;
    for (class, pc) in m.per_class.iter().enumerate() {
        println!("  class {class}: tp {:3} fp {:3} fn {:3}  F1 {:.3}", c.tp[class], c.fp[class], c.fn_[class], pc.f1);
    }
    Ok(())
}
