//! Class activation heatmaps (grad-CAM) and their agreement with human masks.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wmd_nn::{Mode, Real, Shape, Tensor};

use crate::data::ActionClass;
use crate::encoder::{resize_bilinear, EncodedInput, Image, InputForm};
use crate::error::{Error, Result};
use crate::masks::HumanMask;
use crate::metrics::{mean_std, overlap};
use crate::models::{image_batch, ClassifierModel};

/// A model whose last convolutional maps can be read and differentiated.
pub trait CamModel<F: Real> {
    fn num_classes(&self) -> usize;

    /// Runs the model in inference mode, returning `(maps, logits)`.
    fn cam_forward(&mut self, x: &Tensor<F>) -> (Tensor<F>, Tensor<F>);

    /// Pulls a logit gradient back to the maps of the last forward pass.
    fn cam_backward(&mut self, grad_logits: &Tensor<F>) -> Tensor<F>;
}

impl<F: Real> CamModel<F> for ClassifierModel<F> {
    fn num_classes(&self) -> usize {
        self.config().num_classes
    }

    fn cam_forward(&mut self, x: &Tensor<F>) -> (Tensor<F>, Tensor<F>) {
        ClassifierModel::cam_forward(self, x, Mode::Eval)
    }

    fn cam_backward(&mut self, grad_logits: &Tensor<F>) -> Tensor<F> {
        ClassifierModel::cam_backward(self, grad_logits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusHeatmap {
    pub size: usize,
    /// Row-major, min-max normalized to [0, 1].
    pub heat: Vec<f32>,
    pub target_class: usize,
    /// Coarse map before upsampling and normalization.
    pub raw: Image,
}

impl FocusHeatmap {
    pub fn binarize(&self, threshold: f32) -> Vec<bool> {
        self.heat.iter().map(|&v| v >= threshold).collect()
    }

    pub fn as_image(&self) -> Image {
        Image { height: self.size, width: self.size, channels: 1, data: self.heat.clone() }
    }
}

/// Stretches values to [0, 1]. A map with no spread becomes all zeros when it
/// is zero and all ones otherwise.
pub fn min_max_normalize(values: &mut [f32]) {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if values.is_empty() {
        return;
    }
    let range = hi - lo;
    if range <= f32::EPSILON * hi.abs().max(1.0) {
        let fill = if hi > 0.0 { 1.0 } else { 0.0 };
        values.iter_mut().for_each(|v| *v = fill);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / range);
    }
}

/// Heatmap for `class` on one encoded image.
///
/// Channel weights are the spatial means of the logit gradient with respect
/// to each map; the weighted sum of maps is rectified, bilinearly upsampled
/// to the input grid and min-max normalized.
pub fn grad_cam<F: Real>(model: &mut dyn CamModel<F>, input: &Image, class: usize) -> Result<FocusHeatmap> {
    let classes = model.num_classes();
    if class >= classes {
        return Err(Error::Class(class));
    }
    let x = image_batch::<F>(&[input])?;
    let (maps, logits) = model.cam_forward(&x);
    let mut g = Tensor::zeros(logits.shape());
    g.data_mut()[class * logits.shape().n] = F::one();
    let grads = model.cam_backward(&g);
    let raw = weighted_maps(&maps, &grads);
    let mut heat = resize_bilinear(&raw, input.height, input.width).data;
    min_max_normalize(&mut heat);
    Ok(FocusHeatmap { size: input.height, heat, target_class: class, raw })
}

/// `max(0, sum_k alpha_k A^k)` for the first sample of a batch, where
/// `alpha_k` is the spatial mean of the gradient on map `k`.
pub fn weighted_maps<F: Real>(maps: &Tensor<F>, grads: &Tensor<F>) -> Image {
    let s: Shape = maps.shape();
    let p = s.h * s.w;
    let mut acc = vec![0.0f64; p];
    for c in 0..s.c {
        let a = maps.plane(c, 0);
        let alpha = grads.plane(c, 0).iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / p as f64;
        for (dst, v) in acc.iter_mut().zip(a) {
            *dst += alpha * v.to_f64().unwrap();
        }
    }
    Image { height: s.h, width: s.w, channels: 1, data: acc.into_iter().map(|v| v.max(0.0) as f32).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocusScore {
    pub dice: f64,
    pub iou: f64,
    /// `2 sum(h m) / (sum h + sum m)` on the continuous heatmap.
    pub soft_dice: f64,
}

pub const FOCUS_THRESHOLD: f32 = 0.5;

/// Overlap of a heatmap, binarized at 0.5, with a human mask.
pub fn focus_score(heatmap: &FocusHeatmap, mask: &HumanMask) -> Result<FocusScore> {
    if mask.corrupted {
        return Err(Error::CorruptedWindow { start: mask.source_window });
    }
    if mask.size != heatmap.size || mask.mask.len() != heatmap.heat.len() {
        return Err(Error::Shape(format!("{0}x{0} heatmap against a {1}x{1} mask", heatmap.size, mask.size)));
    }
    let (iou, dice) = overlap(&heatmap.binarize(FOCUS_THRESHOLD), &mask.mask)?;
    let (mut inter, mut sum_h, mut sum_m) = (0.0, 0.0, 0.0);
    for (&h, &m) in heatmap.heat.iter().zip(&mask.mask) {
        let m = if m { 1.0 } else { 0.0 };
        inter += f64::from(h) * m;
        sum_h += f64::from(h);
        sum_m += m;
    }
    let soft_dice = if sum_h + sum_m == 0.0 { 1.0 } else { 2.0 * inter / (sum_h + sum_m) };
    Ok(FocusScore { dice, iou, soft_dice })
}

/// Aggregate focus for one (input form, crop) combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusRow {
    pub form: InputForm,
    pub cropped: bool,
    pub count: usize,
    pub skipped_corrupted: usize,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub iou_mean: f64,
    pub iou_std: f64,
    pub soft_dice_mean: f64,
    pub soft_dice_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusReport {
    pub rows: Vec<FocusRow>,
}

/// One scored (or skipped) sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocusEntry {
    pub form: InputForm,
    pub cropped: bool,
    /// `None` when the mask was corrupted.
    pub score: Option<FocusScore>,
}

impl FocusReport {
    /// Mean and population standard deviation per (form, crop) present.
    pub fn from_entries(entries: &[FocusEntry]) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Data("no heatmap/mask pairs to score".into()));
        }
        let mut groups: BTreeMap<(InputForm, bool), (Vec<FocusScore>, usize)> = BTreeMap::new();
        for e in entries {
            let g = groups.entry((e.form, e.cropped)).or_default();
            match e.score {
                Some(s) => g.0.push(s),
                None => g.1 += 1,
            }
        }
        let rows = groups
            .into_iter()
            .map(|((form, cropped), (scores, skipped))| {
                let stats = |f: fn(&FocusScore) -> f64| mean_std(&scores.iter().map(f).collect::<Vec<_>>());
                let (dice_mean, dice_std) = stats(|s| s.dice);
                let (iou_mean, iou_std) = stats(|s| s.iou);
                let (soft_dice_mean, soft_dice_std) = stats(|s| s.soft_dice);
                FocusRow {
                    form,
                    cropped,
                    count: scores.len(),
                    skipped_corrupted: skipped,
                    dice_mean,
                    dice_std,
                    iou_mean,
                    iou_std,
                    soft_dice_mean,
                    soft_dice_std,
                }
            })
            .collect();
        Ok(Self { rows })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

/// An encoded input paired with the mask of the same window.
#[derive(Debug, Clone)]
pub struct FocusPair {
    pub input: EncodedInput,
    pub mask: HumanMask,
}

/// Scores grad-CAMs of every pair against its mask. The heatmap targets the
/// labeled class, or the predicted class for unlabeled inputs. Pairs with a
/// corrupted mask are counted but not scored.
pub fn focus_report<F: Real>(model: &mut ClassifierModel<F>, pairs: &[FocusPair]) -> Result<FocusReport> {
    let mut entries = Vec::with_capacity(pairs.len());
    for p in pairs {
        let score = if p.mask.corrupted {
            None
        } else {
            let class = match p.input.class {
                Some(c) => c.id(),
                None => crate::models::argmax(&model.predict_images(&[&p.input.image])?[0]),
            };
            Some(focus_score(&grad_cam(model, &p.input.image, class)?, &p.mask)?)
        };
        entries.push(FocusEntry { form: p.input.form, cropped: p.input.cropped, score });
    }
    FocusReport::from_entries(&entries)
}

/// Heatmap for the class an action label names.
pub fn grad_cam_for<F: Real>(model: &mut dyn CamModel<F>, input: &Image, class: ActionClass) -> Result<FocusHeatmap> {
    grad_cam(model, input, class.id())
}
