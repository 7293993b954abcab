use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wmd::data::ActionClass;
use wmd::encoder::{EncodedInput, Image, InputForm, Window};
use wmd::focus::*;
use wmd::masks::HumanMask;
use wmd::models::*;
use wmd::Error;
use wmd_nn::{Mode, Shape, Tensor};

/// Maps = first input channel unchanged; logit 0 is the spatial mean of the
/// map, logit 1 is a constant.
struct MeanModel {
    scale: f64,
}

impl CamModel<f64> for MeanModel {
    fn num_classes(&self) -> usize {
        2
    }

    fn cam_forward(&mut self, x: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
        let s = x.shape();
        let maps = Tensor::from_vec(Shape::new(1, 1, s.h, s.w), x.plane(0, 0).to_vec());
        let mean = maps.sum() / (s.h * s.w) as f64;
        (maps, Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![self.scale * mean, 3.0 * self.scale]))
    }

    fn cam_backward(&mut self, g: &Tensor<f64>) -> Tensor<f64> {
        let n = 8 * 8;
        Tensor::from_vec(Shape::new(1, 1, 8, 8), vec![self.scale * g.data()[0] / n as f64; n])
    }
}

fn signed_image(seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_vec(8, 8, 3, (0..8 * 8 * 3).map(|_| rng.gen_range(-1.0..1.0f32)).collect()).unwrap()
}

#[test]
fn mean_logit_gives_rectified_map() {
    let img = signed_image(1);
    let cam = grad_cam(&mut MeanModel { scale: 1.0 }, &img, 0).unwrap();
    let a: Vec<f32> = (0..64).map(|i| img.data[i * 3]).collect();
    for (raw, v) in cam.raw.data.iter().zip(&a) {
        assert!((raw - v.max(0.0) / 64.0).abs() < 1e-7);
    }
    let hi = a.iter().fold(0.0f32, |m, v| m.max(*v));
    for (h, v) in cam.heat.iter().zip(&a) {
        assert!((h - v.max(0.0) / hi).abs() < 1e-5);
    }
}

#[test]
fn logit_without_map_dependence_gives_zero_heat() {
    let cam = grad_cam(&mut MeanModel { scale: 1.0 }, &signed_image(2), 1).unwrap();
    assert!(cam.heat.iter().all(|&v| v == 0.0));
    assert!(matches!(grad_cam(&mut MeanModel { scale: 1.0 }, &signed_image(2), 2), Err(Error::Class(2))));
}

#[test]
fn logit_scale_does_not_change_binarized_heat() {
    let img = signed_image(3);
    let a = grad_cam(&mut MeanModel { scale: 1.0 }, &img, 0).unwrap();
    let b = grad_cam(&mut MeanModel { scale: 37.0 }, &img, 0).unwrap();
    assert_eq!(a.binarize(0.5), b.binarize(0.5));
}

#[test]
fn map_gradients_match_finite_differences() {
    let cfg = ModelConfig { attention: true, scale: 0.125, input_size: 64, ..ModelConfig::new(Backbone::VggStyle) };
    let mut model = build_classifier::<f64>(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = Shape::new(3, 1, 64, 64);
    let x = Tensor::from_vec(s, (0..s.len()).map(|_| rng.gen_range(0.0..1.0)).collect());
    let (maps, logits) = model.cam_forward(&x, Mode::Eval);
    let class = 2;
    let mut g = Tensor::zeros(logits.shape());
    g.data_mut()[class] = 1.0;
    let analytic = model.cam_backward(&g);
    let h = 1e-6;
    for i in (0..maps.len()).step_by(7) {
        let mut up = maps.clone();
        up.data_mut()[i] += h;
        let mut down = maps.clone();
        down.data_mut()[i] -= h;
        let numeric =
            (model.head_logits(&up, Mode::Eval).data()[class] - model.head_logits(&down, Mode::Eval).data()[class]) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        assert!(err < 1e-3 || (a - numeric).abs() < 1e-9, "entry {i}: {a} vs {numeric}");
    }
}

#[test]
fn real_model_heatmap_is_normalized() {
    let cfg = ModelConfig { scale: 0.125, input_size: 64, ..ModelConfig::new(Backbone::Residual) };
    let mut model = build_classifier::<f32>(&cfg).unwrap();
    let img = Image::from_vec(64, 64, 3, (0..64 * 64 * 3).map(|i| (i % 13) as f32 / 13.0).collect()).unwrap();
    let cam = grad_cam(&mut model, &img, 1).unwrap();
    assert_eq!(cam.heat.len(), 64 * 64);
    assert_eq!((cam.raw.height, cam.raw.width), (2, 2));
    assert!(cam.heat.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(cam.raw.data.iter().all(|&v| v >= 0.0));
}

fn heatmap(heat: Vec<f32>, size: usize) -> FocusHeatmap {
    FocusHeatmap { size, heat, target_class: 0, raw: Image::zeros(1, 1, 1) }
}

fn human(mask: Vec<bool>, size: usize) -> HumanMask {
    HumanMask { size, mask, corrupted: false, source_window: 0 }
}

fn stripe_mask(size: usize, cols: usize) -> Vec<bool> {
    (0..size * size).map(|i| i % size < cols).collect()
}

#[test]
fn focus_score_examples() {
    let m = stripe_mask(10, 3);
    let exact = heatmap(m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(), 10);
    let s = focus_score(&exact, &human(m.clone(), 10)).unwrap();
    assert_eq!((s.dice, s.iou, s.soft_dice), (1.0, 1.0, 1.0));

    let f = 0.3;
    let uniform = focus_score(&heatmap(vec![1.0; 100], 10), &human(m.clone(), 10)).unwrap();
    assert!((uniform.dice - 2.0 * f / (1.0 + f)).abs() < 1e-12);

    let zero = focus_score(&heatmap(vec![0.0; 100], 10), &human(m.clone(), 10)).unwrap();
    assert_eq!((zero.dice, zero.iou, zero.soft_dice), (0.0, 0.0, 0.0));

    let corrupted = HumanMask { corrupted: true, source_window: 12, ..human(m, 10) };
    assert!(matches!(focus_score(&exact, &corrupted), Err(Error::CorruptedWindow { start: 12 })));
    assert!(matches!(focus_score(&exact, &human(vec![true; 16], 4)), Err(Error::Shape(_))));
}

proptest! {
    #[test]
    fn dice_and_iou_are_linked(heat in prop::collection::vec(0.0f32..1.0, 64), bits in prop::collection::vec(any::<bool>(), 64)) {
        let s = focus_score(&heatmap(heat, 8), &human(bits, 8)).unwrap();
        prop_assert!((s.dice - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-12);
    }
}

fn entry(form: InputForm, cropped: bool, dice: f64) -> FocusEntry {
    let iou = dice / (2.0 - dice);
    FocusEntry { form, cropped, score: Some(FocusScore { dice, iou, soft_dice: dice }) }
}

#[test]
fn report_aggregates_per_combination() {
    let perfect = FocusReport::from_entries(&[entry(InputForm::Add, true, 1.0), entry(InputForm::Add, true, 1.0)]).unwrap();
    assert_eq!(perfect.rows.len(), 1);
    assert_eq!((perfect.rows[0].dice_mean, perfect.rows[0].dice_std), (1.0, 0.0));

    let half = FocusReport::from_entries(&[entry(InputForm::Dif, false, 0.0), entry(InputForm::Dif, false, 1.0)]).unwrap();
    assert_eq!((half.rows[0].dice_mean, half.rows[0].dice_std), (0.5, 0.5));

    let mixed = FocusReport::from_entries(&[
        entry(InputForm::Dif, false, 0.2),
        entry(InputForm::Add, false, 0.4),
        entry(InputForm::Add, true, 0.6),
        entry(InputForm::Add, false, 0.8),
        FocusEntry { form: InputForm::Dif, cropped: true, score: None },
    ])
    .unwrap();
    assert_eq!(mixed.rows.len(), 4);
    let dif_crop = mixed.rows.iter().find(|r| r.form == InputForm::Dif && r.cropped).unwrap();
    assert_eq!((dif_crop.count, dif_crop.skipped_corrupted), (0, 1));

    assert!(matches!(FocusReport::from_entries(&[]), Err(Error::Data(_))));
}

#[test]
fn report_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let report = FocusReport::from_entries(&[entry(InputForm::Add, true, 0.25)]).unwrap();
    report.write_csv(&dir.path().join("focus.csv")).unwrap();
    report.write_json(&dir.path().join("focus.json")).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("focus.csv")).unwrap();
    assert!(csv.starts_with("form,cropped,count"));
    let back: FocusReport = serde_json::from_slice(&std::fs::read(dir.path().join("focus.json")).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn focus_report_over_a_model() {
    let cfg = ModelConfig { scale: 0.125, input_size: 32, ..ModelConfig::new(Backbone::VggStyle) };
    let mut model = build_classifier::<f32>(&cfg).unwrap();
    let pairs: Vec<FocusPair> = (0..3)
        .map(|i| FocusPair {
            input: EncodedInput {
                image: Image::from_vec(32, 32, 3, (0..32 * 32 * 3).map(|k| ((k + i) % 7) as f32 / 7.0).collect()).unwrap(),
                form: InputForm::Dif,
                cropped: true,
                window: Window { start: i, len: 4 },
                class: Some(ActionClass::Walk),
            },
            mask: HumanMask { corrupted: i == 2, ..human(stripe_mask(32, 10), 32) },
        })
        .collect();
    let report = focus_report(&mut model, &pairs).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!((report.rows[0].count, report.rows[0].skipped_corrupted), (2, 1));
}
