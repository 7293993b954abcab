use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmd::models::*;
use wmd::Error;
use wmd_nn::gradcheck::{check_gradients, GradCheckConfig};
use wmd_nn::{bce_with_logits, softmax_cross_entropy, Layer, Mode, Shape, Tensor};

fn random<F: wmd_nn::Real>(shape: Shape, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_vec(shape, (0..shape.len()).map(|_| F::lit(rng.gen_range(0.0..1.0))).collect())
}

fn cfg(backbone: Backbone, scale: f64, input: usize) -> ModelConfig {
    ModelConfig { scale, input_size: input, ..ModelConfig::new(backbone) }
}

#[test]
fn full_width_feature_map_shapes() {
    let x = random::<f32>(Shape::new(3, 1, 224, 224), 1);
    let mut vgg = build_classifier::<f32>(&cfg(Backbone::VggStyle, 1.0, 224)).unwrap();
    let out = vgg.output(&x);
    assert_eq!(out.feature_maps.shape(), Shape::new(512, 1, 7, 7));
    assert!((out.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);

    let mut res = build_classifier::<f32>(&cfg(Backbone::Residual, 1.0, 224)).unwrap();
    let out = res.output(&x);
    assert_eq!(out.feature_maps.shape(), Shape::new(2048, 1, 7, 7));
    assert!((out.probs[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
}

#[test]
fn every_classifier_outputs_a_distribution() {
    for backbone in [Backbone::VggStyle, Backbone::Residual, Backbone::EncoderClassifier] {
        for attention in [false, true] {
            let c = ModelConfig { attention, ..cfg(backbone, 0.125, 64) };
            let mut m = build_classifier::<f32>(&c).unwrap();
            let out = m.output(&random(Shape::new(3, 3, 64, 64), 2));
            for p in &out.probs {
                assert!(p.iter().all(|&v| v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{backbone} {attention}");
            }
            // argmax of the logits and of the probabilities agree
            for (l, p) in out.logits.iter().zip(&out.probs) {
                let shifted: Vec<f64> = l.iter().map(|v| v + 7.5).collect();
                assert_eq!(argmax(&shifted), argmax(p));
            }
        }
    }
}

#[test]
fn segmenter_rejected_as_classifier_and_unknown_backbone() {
    assert!(matches!(build_classifier::<f32>(&cfg(Backbone::Segmenter, 0.25, 64)), Err(Error::Config(_))));
    assert!(matches!("mobilenet".parse::<Backbone>(), Err(Error::Config(_))));
    let bad = ModelConfig { attention: true, ..cfg(Backbone::Segmenter, 0.25, 64) };
    assert!(matches!(build_segmenter::<f32>(&bad), Err(Error::Config(_))));
}

#[test]
fn attention_with_zero_params_halves_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut block = ChannelAttention::<f64>::new(16, &mut rng);
    let (c, h) = (16, block.hidden());
    block.set_params(&vec![0.0; h * c], &vec![0.0; h], &vec![0.0; c * h], &vec![0.0; c]).unwrap();
    let maps = random::<f64>(Shape::new(16, 2, 5, 5), 4);
    let out = channel_attention(&maps, &mut block).unwrap();
    for (o, m) in out.data().iter().zip(maps.data()) {
        assert!((o - 0.5 * m).abs() < 1e-12);
    }
    // constant descriptor makes the block homogeneous in its input
    let mut scaled_maps = maps.clone();
    scaled_maps.scale(3.0);
    let out3 = channel_attention(&scaled_maps, &mut block).unwrap();
    for (a, b) in out3.data().iter().zip(out.data()) {
        assert!((a - 3.0 * b).abs() < 1e-12);
    }
}

#[test]
fn attention_saturated_descriptor_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut block = ChannelAttention::<f64>::new(8, &mut rng);
    block.set_params(&[0.0; 8], &[0.0], &[0.0; 8], &[100.0; 8]).unwrap();
    let maps = random::<f64>(Shape::new(8, 1, 4, 4), 6);
    let out = channel_attention(&maps, &mut block).unwrap();
    for (o, m) in out.data().iter().zip(maps.data()) {
        assert!((o - m).abs() < 1e-6);
    }
}

#[test]
fn attention_single_channel_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut block = ChannelAttention::<f64>::new(1, &mut rng);
    let (w1, b1, w2, b2) = (0.8, -0.1, -1.5, 0.3);
    block.set_params(&[w1], &[b1], &[w2], &[b2]).unwrap();
    let vals = [1.0, 2.0, -0.5, 0.25];
    let maps = Tensor::from_vec(Shape::new(1, 1, 2, 2), vals.to_vec());
    let mean = vals.iter().sum::<f64>() / 4.0;
    let hidden = (w1 * mean + b1).max(0.0);
    let d = 1.0 / (1.0 + (-(w2 * hidden + b2)).exp());
    let out = channel_attention(&maps, &mut block).unwrap();
    for (o, v) in out.data().iter().zip(vals) {
        assert!((o - v * d).abs() < 1e-12);
    }
}

#[test]
fn attention_parameter_shape_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut block = ChannelAttention::<f64>::new(8, &mut rng);
    assert!(matches!(block.set_params(&[0.0; 7], &[0.0], &[0.0; 8], &[0.0; 8]), Err(Error::Shape(_))));
    let maps = random::<f64>(Shape::new(4, 1, 2, 2), 9);
    assert!(matches!(channel_attention(&maps, &mut block), Err(Error::Shape(_))));
}

#[test]
fn segmenter_shapes_and_widths() {
    let mut seg = build_segmenter::<f32>(&cfg(Backbone::Segmenter, 0.25, 224)).unwrap();
    assert_eq!(seg.widths(), [16, 32, 64, 128, 256]);
    let p = seg.probabilities(&random(Shape::new(3, 1, 224, 224), 10));
    assert_eq!(p.shape(), Shape::new(1, 1, 224, 224));
    assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn same_seed_same_initial_weights() {
    let c = cfg(Backbone::Segmenter, 0.125, 64);
    let a = export_weights(&mut build_segmenter::<f32>(&c).unwrap());
    let b = export_weights(&mut build_segmenter::<f32>(&c).unwrap());
    assert_eq!(a, b);
    let other = export_weights(&mut build_segmenter::<f32>(&ModelConfig { seed: 1, ..c }).unwrap());
    assert_ne!(a, other);
}

#[test]
fn encoder_transfer_copies_and_freezes() {
    let seg_cfg = ModelConfig { seed: 11, ..cfg(Backbone::Segmenter, 0.125, 64) };
    let mut seg = build_segmenter::<f32>(&seg_cfg).unwrap();
    let weights = export_weights(&mut seg);
    let mut clf = build_encoder_classifier::<f32>(&cfg(Backbone::EncoderClassifier, 0.125, 64), Some(&weights)).unwrap();

    let copied = export_weights(&mut clf).scoped("backbone");
    let encoder_entries: Vec<_> = weights.entries.iter().filter(|(k, _)| k.starts_with("encoder.")).collect();
    assert_eq!(encoder_entries.len(), 5 * 2 * 5);
    for (name, entry) in encoder_entries {
        let got = &copied.entries[name];
        assert_eq!(got.dims, entry.dims);
        assert!(got.values.iter().zip(&entry.values).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
    }

    let frozen = frozen_layers(&mut clf);
    assert_eq!(frozen.len(), 16);
    let encoder_layers: Vec<String> =
        weighted_layers(&mut clf, "").into_iter().filter(|l| l.starts_with("backbone.encoder.")).collect();
    assert_eq!(encoder_layers.len(), ENCODER_WEIGHTED_LAYERS);
    assert_eq!(frozen, encoder_layers[..16]);
    assert!(frozen.last().unwrap().starts_with("backbone.encoder.level3."));

    let out = clf.output(&random(Shape::new(3, 2, 64, 64), 12));
    assert!(out.probs.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-6));
}

#[test]
fn encoder_transfer_shape_mismatch_fails() {
    let mut seg = build_segmenter::<f32>(&cfg(Backbone::Segmenter, 0.25, 64)).unwrap();
    let weights = export_weights(&mut seg);
    let r = build_encoder_classifier::<f32>(&cfg(Backbone::EncoderClassifier, 0.125, 64), Some(&weights));
    assert!(matches!(r, Err(Error::Transfer(_))));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let c = ModelConfig { attention: true, ..cfg(Backbone::Residual, 0.125, 64) };
    let mut m = build_classifier::<f32>(&c).unwrap();
    let mut manifest = CheckpointManifest::new(&c);
    manifest.epoch = Some(3);
    manifest.val_metric = Some(0.75);
    let ckpt = Checkpoint::from_model(&mut m, manifest);
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);

    let mut fresh = build_classifier::<f32>(&ModelConfig { seed: 99, ..c }).unwrap();
    let report = apply_weights(&mut fresh, &back.weights);
    assert!(report.unloaded.is_empty() && report.unused.is_empty());
    assert_eq!(export_weights(&mut fresh), ckpt.weights);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let c = cfg(Backbone::VggStyle, 0.0625, 32);
    let mut m = build_classifier::<f32>(&c).unwrap();
    let bytes = Checkpoint::from_model(&mut m, CheckpointManifest::new(&c)).to_bytes().unwrap();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"NOTACKPTxxxxxxxx").is_err());
}

#[test]
fn import_reports_renamed_layer() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg(Backbone::VggStyle, 0.0625, 32);
    let mut source = build_classifier::<f32>(&ModelConfig { seed: 5, ..c.clone() }).unwrap();
    let mut ckpt = Checkpoint::from_model(&mut source, CheckpointManifest::new(&c));
    let w = ckpt.weights.entries.remove("backbone.block2.conv1.weight").unwrap();
    ckpt.weights.entries.insert("backbone.block2.conv1_renamed.weight".into(), w);
    let path = dir.path().join("imagenet.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();

    let mut target = build_classifier::<f32>(&c).unwrap();
    let before = export_weights(&mut target);
    let report = import_pretrained(&mut target, &Pretrained::ImagenetImport(path)).unwrap();
    assert_eq!(report.unloaded_layers, vec!["backbone.block2.conv1".to_string()]);
    let after = export_weights(&mut target);
    assert_eq!(after.entries["backbone.block1.conv1.weight"], ckpt.weights.entries["backbone.block1.conv1.weight"]);
    // head stays freshly initialized
    assert_eq!(after.entries["head.dense.weight"], before.entries["head.dense.weight"]);

    let none = import_pretrained(&mut target, &Pretrained::None).unwrap();
    assert!(none.loaded_layers.is_empty());
    assert_eq!(none.unloaded_layers.len(), 13 * 2);
}

fn classifier_gradcheck(c: ModelConfig) {
    let mut m = build_classifier::<f64>(&c).unwrap();
    let x = random::<f64>(Shape::new(3, 4, 32, 32), 21);
    let targets = [0, 1, 2, 3];
    let report = check_gradients(
        &mut m,
        |m, f| m.visit_params("", f),
        |m, backward| {
            m.reseed(4);
            let logits = m.forward(&x, Mode::Train);
            let (loss, g) = softmax_cross_entropy(&logits, &targets);
            if backward {
                m.backward(&g);
            }
            loss
        },
        GradCheckConfig { samples_per_param: 2, step: 1e-6, abs_tol: 1e-5, ..Default::default() },
    );
    assert!(report.passed(), "{} {:?}: {:?}", c.backbone, c.attention, report.mismatches);
    assert!(report.params_checked > 10);
}

#[test]
fn gradients_vgg_style() {
    classifier_gradcheck(ModelConfig { attention: true, ..cfg(Backbone::VggStyle, 0.125, 32) });
}

#[test]
fn gradients_residual() {
    classifier_gradcheck(ModelConfig { attention: true, ..cfg(Backbone::Residual, 0.0625, 32) });
}

#[test]
fn gradients_encoder_classifier() {
    classifier_gradcheck(ModelConfig { frozen_layers: 0, ..cfg(Backbone::EncoderClassifier, 0.125, 32) });
}

#[test]
fn gradients_segmenter() {
    let mut m = build_segmenter::<f64>(&cfg(Backbone::Segmenter, 0.125, 32)).unwrap();
    let x = random::<f64>(Shape::new(3, 2, 32, 32), 22);
    let y = random::<f64>(Shape::new(1, 2, 32, 32), 23).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
    let report = check_gradients(
        &mut m,
        |m, f| m.visit_params("", f),
        |m, backward| {
            let z = m.forward(&x, Mode::Train);
            let (loss, g) = bce_with_logits(&z, &y);
            if backward {
                m.backward(&g);
            }
            loss
        },
        GradCheckConfig { samples_per_param: 2, step: 1e-6, abs_tol: 1e-5, ..Default::default() },
    );
    assert!(report.passed(), "{:?}", report.mismatches);
}
