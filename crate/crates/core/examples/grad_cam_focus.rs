//! grad-CAM heatmaps of a briefly trained classifier, scored against human
//! masks with Dice and IoU next to the uniform-heatmap baseline.
//!
//! ```text
//! cargo run --release --example grad_cam_focus -- [out_dir]
//! ```

use std::error::Error;
use std::path::PathBuf;

use image::{GrayImage, Luma};
use wmd::data::{generate_synthetic_trial, split_dataset, Circuit, SplitLayout, SplitRole, SyntheticSceneConfig};
use wmd::encoder::{AugmentConfig, EncoderConfig};
use wmd::focus::{focus_report, focus_score, grad_cam_for, FocusPair};
use wmd::masks::MaskConfig;
use wmd::models::{build_classifier, Backbone, ModelConfig};
use wmd::pipeline::{materialize, split_role, trial_samples, PrepareConfig};
use wmd::train::{train_classifier, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("focus"));
    std::fs::create_dir_all(&out)?;

    let encoder = EncoderConfig { input_size: 96, ..Default::default() };
    let prepare = PrepareConfig { frames_per_segment: 6, split: SplitLayout::Ratios { train: 0.6, val: 0.2, test: 0.2 }, ..Default::default() };
    let split = split_dataset(&[1, 2, 3, 4, 5], prepare.split)?;
    let (mut train, mut val, mut pairs) = (Vec::new(), Vec::new(), Vec::new());
    for (participant_id, gait_speed) in (1..=5).flat_map(|p| [0.5, 0.7, 1.0].map(|s| (p, s))) {
        for circuit in Circuit::ALL {
            let scene = SyntheticSceneConfig { participant_id, circuit, gait_speed, size: 128, duration_scale: 0.35, ..Default::default() };
            let trial = generate_synthetic_trial(&scene, 5)?.downsampled();
            let role = split_role(&split, participant_id)?;
            let specs = trial_samples(&trial, role, &prepare, encoder.window_len)?;
            for (input, mask) in materialize(&trial, &specs, &encoder, Some(&MaskConfig::default()))? {
                match role {
                    SplitRole::Train => train.push(input),
                    SplitRole::Val => val.push(input),
                    SplitRole::Test => pairs.push(FocusPair { input, mask: mask.expect("masks requested") }),
                }
            }
        }
    }

    let model_cfg = ModelConfig { attention: true, scale: 0.25, input_size: encoder.input_size, ..ModelConfig::new(Backbone::Residual) };
    let mut model = build_classifier::<f32>(&model_cfg)?;
    let train_cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 16,
        max_epochs: 12,
        augment: AugmentConfig { shift: 0.0, zoom: (1.0, 1.0), blur_prob: 0.0, ..Default::default() },
        ..TrainConfig::classification()
    };
    let outcome = train_classifier(&mut model, &train, &val, &train_cfg)?;
    println!("classifier val F1 {:.3}", outcome.log.best_value);

    // heatmaps of the first few clean test windows
    for (i, pair) in pairs.iter().filter(|p| !p.mask.corrupted).take(4).enumerate() {
        let class = pair.input.class.expect("labeled window");
        let heat = grad_cam_for(&mut model, &pair.input.image, class)?;
        let score = focus_score(&heat, &pair.mask)?;
        let side = heat.size as u32;
        let img = GrayImage::from_fn(side, side, |x, y| Luma([(heat.heat[(y * side + x) as usize] * 255.0).round() as u8]));
        img.save(out.join(format!("cam_{i}_{class}.png")))?;
        println!("window {i} ({class}): Dice {:.3}, IoU {:.3}, soft Dice {:.3}", score.dice, score.iou, score.soft_dice);
    }

    let report = focus_report(&mut model, &pairs)?;
    let clean: Vec<f64> = pairs.iter().filter(|p| !p.mask.corrupted).map(|p| p.mask.fraction()).collect();
    let f = clean.iter().sum::<f64>() / clean.len().max(1) as f64;
    for row in &report.rows {
        println!(
            "{} {}: {} windows ({} corrupted skipped), Dice {:.3} ± {:.3}, IoU {:.3} ± {:.3}",
            row.form.name(),
            if row.cropped { "cropped" } else { "full" },
            row.count,
            row.skipped_corrupted,
            row.dice_mean,
            row.dice_std,
            row.iou_mean,
            row.iou_std
        );
    }
    println!("mean mask fraction {f:.3}; a uniform heatmap scores Dice {:.3}", 2.0 * f / (1.0 + f));
    Ok(())
}
