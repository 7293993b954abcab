//! Trains the leg segmenter on depth-derived masks, then reuses its encoder
//! in a classifier whose first 16 weighted layers stay frozen.
//!
//! ```text
//! cargo run --release --example segment_and_transfer -- [seg_epochs] [cls_epochs]
//! ```

use std::error::Error;

use wmd::data::{generate_synthetic_trial, split_dataset, Circuit, SplitLayout, SplitRole, SyntheticSceneConfig};
use wmd::encoder::{AugmentConfig, EncoderConfig};
use wmd::masks::MaskConfig;
use wmd::models::{build_encoder_classifier, build_segmenter, export_weights, frozen_layers, param_values, Backbone, ModelConfig};
use wmd::pipeline::{materialize, split_role, trial_samples, PrepareConfig};
use wmd::train::{evaluate_segmenter, train_classifier, train_segmenter_observed, SegSample, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>());
    let seg_epochs = args.next().transpose()?.unwrap_or(4);
    let cls_epochs = args.next().transpose()?.unwrap_or(2);

    let encoder = EncoderConfig { input_size: 64, ..Default::default() };
    let prepare = PrepareConfig { frames_per_segment: 5, split: SplitLayout::Ratios { train: 0.6, val: 0.2, test: 0.2 }, ..Default::default() };
    let split = split_dataset(&[1, 2, 3, 4, 5], prepare.split)?;
    let (mut seg_train, mut seg_val, mut cls_train, mut cls_val) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (participant_id, gait_speed) in (1..=5).flat_map(|p| [0.5, 0.7, 1.0].map(|s| (p, s))) {
        for circuit in [Circuit::RightWide, Circuit::LeftTight] {
            let scene = SyntheticSceneConfig { participant_id, circuit, gait_speed, size: 128, duration_scale: 0.35, ..Default::default() };
            let trial = generate_synthetic_trial(&scene, 11)?.downsampled();
            let role = split_role(&split, participant_id)?;
            if role == SplitRole::Test {
                continue;
            }
            let specs = trial_samples(&trial, role, &prepare, encoder.window_len)?;
            for (input, mask) in materialize(&trial, &specs, &encoder, Some(&MaskConfig::default()))? {
                let mask = mask.expect("masks requested");
                let (seg, cls) = if role == SplitRole::Train { (&mut seg_train, &mut cls_train) } else { (&mut seg_val, &mut cls_val) };
                if !mask.corrupted {
                    seg.push(SegSample { image: input.image.clone(), mask: mask.mask });
                }
                cls.push(input);
            }
        }
    }
    println!("segmentation: {} train / {} val; classification: {} / {}", seg_train.len(), seg_val.len(), cls_train.len(), cls_val.len());

    let seg_cfg = ModelConfig { scale: 0.25, input_size: encoder.input_size, ..ModelConfig::new(Backbone::Segmenter) };
    let mut segmenter = build_segmenter::<f32>(&seg_cfg)?;
    let seg_train_cfg = TrainConfig { learning_rate: 1e-3, max_epochs: seg_epochs, ..TrainConfig::segmentation() };
    train_segmenter_observed(&mut segmenter, &seg_train, &seg_val, &seg_train_cfg, &mut |r| {
        println!("segmenter epoch {}: loss {:.4}  val Dice {:.3}", r.epoch, r.train_loss, r.val_metric)
    })?;
    let (loss, dice) = evaluate_segmenter(&mut segmenter, &seg_val)?;
    println!("segmenter validation: loss {loss:.4}, Dice {dice:.3}");

    let weights = export_weights(&mut segmenter);
    let cls_cfg = ModelConfig { scale: 0.25, input_size: encoder.input_size, ..ModelConfig::new(Backbone::EncoderClassifier) };
    let mut classifier = build_encoder_classifier::<f32>(&cls_cfg, Some(&weights))?;
    let frozen = frozen_layers(&mut classifier);
    let before = param_values(&mut classifier);
    let cls_train_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: cls_epochs,
        augment: AugmentConfig { shift: 0.0, zoom: (1.0, 1.0), blur_prob: 0.0, ..Default::default() },
        ..TrainConfig::classification()
    };
    let outcome = train_classifier(&mut classifier, &cls_train, &cls_val, &cls_train_cfg)?;
    println!("transfer classifier: best val F1 {:.3} at epoch {}", outcome.log.best_value, outcome.log.best_epoch);

    let after = param_values(&mut classifier);
    let unchanged = frozen.iter().all(|layer| {
        let prefix = format!("{layer}.");
        before.iter().filter(|(k, _)| k.starts_with(&prefix)).all(|(k, v)| after[k] == *v)
    });
    println!("{} frozen layers ({} .. {}), unchanged after training: {unchanged}", frozen.len(), frozen[0], frozen[frozen.len() - 1]);
    Ok(())
}
