//! Mini-batch training loops, the plateau learning-rate schedule, model
//! selection and offline evaluation.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wmd_nn::{
    bce_with_logits, softmax_cross_entropy, zero_grads, Adam, Layer, Mode, Optimizer, Real, Sgd, Shape, Tensor,
};

use crate::encoder::{AugmentConfig, AugmentDraw, EncodedInput, Image};
use crate::error::{Error, Result};
use crate::metrics::{confusion, offline_metrics, overlap, OfflineMetrics};
use crate::models::{apply_weights, export_weights, image_batch, ClassifierModel, SegmenterModel, WeightSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    Segmentation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub task: Task,
    pub learning_rate: f64,
    /// SGD momentum (classification only).
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new training-loss minimum before the rate is halved.
    pub patience: usize,
    pub lr_floor: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl TrainConfig {
    pub fn classification() -> Self {
        Self {
            task: Task::Classification,
            learning_rate: 1e-3,
            momentum: 0.9,
            nesterov: true,
            batch_size: 64,
            max_epochs: 100,
            patience: 4,
            lr_floor: 1e-4,
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }

    pub fn segmentation() -> Self {
        Self {
            task: Task::Segmentation,
            learning_rate: 1e-4,
            momentum: 0.0,
            nesterov: false,
            batch_size: 16,
            max_epochs: 30,
            lr_floor: 1e-6,
            ..Self::classification()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("learning rate", self.learning_rate), ("lr floor", self.lr_floor)];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{name} must be positive, got {v}")));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epochs and patience must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    fn optimizer<F: Real>(&self) -> Box<dyn Optimizer<F>> {
        match self.task {
            Task::Classification => Box::new(Sgd::new(self.learning_rate, self.momentum, self.nesterov)),
            Task::Segmentation => Box::new(Adam::new(self.learning_rate)),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::classification()
    }
}

/// Halves the rate after `patience` epochs without a new loss minimum
/// (improvement larger than 1e-6), never going below `floor`.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    floor: f64,
    patience: usize,
    best: f64,
    wait: usize,
}

impl PlateauSchedule {
    pub const MIN_IMPROVEMENT: f64 = 1e-6;

    pub fn new(lr: f64, floor: f64, patience: usize) -> Self {
        Self { lr: lr.max(floor), floor, patience, best: f64::INFINITY, wait: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch loss and returns the rate for the next epoch.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best - Self::MIN_IMPROVEMENT {
            self.best = loss;
            self.wait = 0;
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                self.lr = (self.lr * 0.5).max(self.floor);
                self.wait = 0;
            }
        }
        self.lr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Top-1 accuracy (classification) or mean Dice (segmentation).
    pub train_metric: f64,
    pub val_loss: f64,
    /// Macro F1 (classification) or mean Dice (segmentation).
    pub val_metric: f64,
    /// Rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: Task,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the selected weights.
    pub best_epoch: usize,
    /// Validation F1 (classification) or loss (segmentation) at `best_epoch`.
    pub best_value: f64,
}

impl TrainLog {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    pub fn selection_metric(&self) -> &'static str {
        match self.task {
            Task::Classification => "val_f1",
            Task::Segmentation => "val_loss",
        }
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.get(self.best_epoch.wrapping_sub(1))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    pub log: TrainLog,
    pub best: WeightSet,
    pub last: WeightSet,
}

fn labels_of(data: &[EncodedInput], split: &str) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    data.iter()
        .map(|d| d.class.map(|c| c.id()).ok_or_else(|| Error::Data(format!("unlabeled sample in {split} split"))))
        .collect()
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss })
    }
}

/// Non-finite gradients mean the loss has left the representable range even
/// when the loss itself still looks finite (ReLU maps NaN to zero).
fn check_grads<F: Real>(model: &mut dyn Layer<F>, loss: f64, epoch: usize) -> Result<()> {
    let mut finite = true;
    model.visit_params("", &mut |_, p| finite &= p.grad.iter().all(|g| g.is_finite()));
    if finite {
        Ok(())
    } else {
        Err(Error::Divergence { epoch, loss: if loss.is_finite() { f64::NAN } else { loss } })
    }
}

fn batches(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size)
}

fn to_f64<F: Real>(v: F) -> f64 {
    v.to_f64().unwrap()
}

/// Per-sample class scores for a batch of encoded images.
pub trait ImageClassifier {
    fn class_probabilities(&mut self, images: &[&Image]) -> Result<Vec<Vec<f64>>>;
}

impl<F: Real> ImageClassifier for ClassifierModel<F> {
    fn class_probabilities(&mut self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.predict_images(images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Mean cross-entropy of the predicted distributions.
    pub loss: f64,
    pub metrics: OfflineMetrics,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f).map_err(|e| Error::io(path, e))
    }
}

pub const EVAL_BATCH: usize = 32;

/// Offline metric suite of `model` over a labeled split.
pub fn evaluate(model: &mut dyn ImageClassifier, data: &[EncodedInput], classes: usize) -> Result<EvalReport> {
    let labels = labels_of(data, "evaluation")?;
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for (chunk, chunk_labels) in data.chunks(EVAL_BATCH).zip(labels.chunks(EVAL_BATCH)) {
        let images: Vec<&Image> = chunk.iter().map(|d| &d.image).collect();
        let probs = model.class_probabilities(&images)?;
        for (p, &y) in probs.iter().zip(chunk_labels) {
            if p.len() != classes {
                return Err(Error::Shape(format!("{} class scores, expected {classes}", p.len())));
            }
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            predictions.push(crate::models::argmax(p));
        }
    }
    let metrics = offline_metrics(&confusion(&predictions, &labels, classes)?);
    Ok(EvalReport { samples: data.len(), loss: loss / data.len() as f64, metrics, predictions, labels })
}

/// Trains with mini-batch SGD (Nesterov momentum) on categorical
/// cross-entropy, halving the rate on training-loss plateaus, and leaves the
/// model at the epoch with the best validation macro F1.
pub fn train_classifier<F: Real>(
    model: &mut ClassifierModel<F>,
    train: &[EncodedInput],
    val: &[EncodedInput],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_classifier_observed(model, train, val, cfg, &mut |_| {})
}

/// [`train_classifier`] with a callback after every epoch.
pub fn train_classifier_observed<F: Real>(
    model: &mut ClassifierModel<F>,
    train: &[EncodedInput],
    val: &[EncodedInput],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_labels = labels_of(train, "train")?;
    let val_labels = labels_of(val, "validation")?;
    let classes = model.config().num_classes;
    let all: Vec<&Image> = train.iter().chain(val).map(|d| &d.image).collect();
    model.check_input(&all)?;

    let mut opt = cfg.optimizer::<F>();
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.lr_floor, cfg.patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA116);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { task: Task::Classification, epochs: Vec::new(), best_epoch: 0, best_value: f64::NEG_INFINITY };
    let mut best = export_weights(model);
    let mut step = 0u64;

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        opt.set_learning_rate(lr);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in batches(&order, cfg.batch_size) {
            let augmented: Vec<Image>;
            let images: Vec<&Image> = if cfg.augment.enabled {
                augmented = idx
                    .iter()
                    .map(|&i| AugmentDraw::sample(&cfg.augment, &mut aug_rng).apply(&train[i].image))
                    .collect();
                augmented.iter().collect()
            } else {
                idx.iter().map(|&i| &train[i].image).collect()
            };
            let targets: Vec<usize> = idx.iter().map(|&i| train_labels[i]).collect();
            let x = image_batch::<F>(&images)?;
            zero_grads(model);
            model.reseed(cfg.seed.wrapping_add(step));
            step += 1;
            let logits = model.forward(&x, Mode::Train);
            let (loss, grad) = softmax_cross_entropy(&logits, &targets);
            let loss = to_f64(loss);
            check_finite(loss, epoch)?;
            model.backward(&grad);
            check_grads(model, loss, epoch)?;
            opt.step(model);
            loss_sum += loss * idx.len() as f64;
            correct += row_argmax(&logits).iter().zip(&targets).filter(|(p, t)| p == t).count();
        }
        let train_loss = loss_sum / train.len() as f64;
        let report = evaluate(model, val, classes)?;
        check_finite(report.loss, epoch)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_metric: correct as f64 / train.len() as f64,
            val_loss: report.loss,
            val_metric: report.metrics.f1,
            lr,
        };
        debug_assert_eq!(report.labels, val_labels);
        if record.val_metric > log.best_value {
            log.best_value = record.val_metric;
            log.best_epoch = epoch;
            best = export_weights(model);
        }
        on_epoch(&record);
        log.epochs.push(record);
        schedule.observe(train_loss);
    }
    let last = export_weights(model);
    apply_weights(model, &best);
    Ok(TrainOutcome { log, best, last })
}

fn row_argmax<F: Real>(logits: &Tensor<F>) -> Vec<usize> {
    let s = logits.shape();
    (0..s.n)
        .map(|n| {
            let row: Vec<f64> = (0..s.c).map(|c| to_f64(logits.data()[c * s.n + n])).collect();
            crate::models::argmax(&row)
        })
        .collect()
}

/// An encoded image with its target mask on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegSample {
    pub image: Image,
    pub mask: Vec<bool>,
}

fn mask_tensor<F: Real>(masks: &[&[bool]], h: usize, w: usize) -> Tensor<F> {
    let mut data = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        data.extend(m.iter().map(|&b| if b { F::one() } else { F::zero() }));
    }
    Tensor::from_vec(Shape::new(1, masks.len(), h, w), data)
}

fn check_seg(data: &[SegSample], size: usize, split: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    match data.iter().find(|s| s.image.height != size || s.image.width != size || s.mask.len() != size * size) {
        Some(s) => Err(Error::Shape(format!(
            "segmenter expects {size}x{size} samples, got a {}x{} image with {} mask cells",
            s.image.height,
            s.image.width,
            s.mask.len()
        ))),
        None => Ok(()),
    }
}

/// Mean BCE and mean per-image Dice (prediction thresholded at 0.5).
pub fn evaluate_segmenter<F: Real>(model: &mut SegmenterModel<F>, data: &[SegSample]) -> Result<(f64, f64)> {
    let size = model.config().input_size;
    check_seg(data, size, "evaluation")?;
    let (mut loss, mut dice) = (0.0, 0.0);
    for chunk in data.chunks(EVAL_BATCH) {
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let masks: Vec<&[bool]> = chunk.iter().map(|s| s.mask.as_slice()).collect();
        let z = model.forward(&image_batch::<F>(&images)?, Mode::Eval);
        let (l, _) = bce_with_logits(&z, &mask_tensor::<F>(&masks, size, size));
        loss += to_f64(l) * chunk.len() as f64;
        for (k, m) in masks.iter().enumerate() {
            let pred: Vec<bool> = z.plane(0, k).iter().map(|&v| v > F::zero()).collect();
            dice += overlap(&pred, m)?.1;
        }
    }
    Ok((loss / data.len() as f64, dice / data.len() as f64))
}

/// Trains with Adam on per-pixel binary cross-entropy and leaves the model at
/// the epoch with the lowest validation loss.
pub fn train_segmenter<F: Real>(
    model: &mut SegmenterModel<F>,
    train: &[SegSample],
    val: &[SegSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_segmenter_observed(model, train, val, cfg, &mut |_| {})
}

pub fn train_segmenter_observed<F: Real>(
    model: &mut SegmenterModel<F>,
    train: &[SegSample],
    val: &[SegSample],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let size = model.config().input_size;
    check_seg(train, size, "train")?;
    check_seg(val, size, "validation")?;

    let mut opt = cfg.optimizer::<F>();
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.lr_floor, cfg.patience);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA116);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog { task: Task::Segmentation, epochs: Vec::new(), best_epoch: 0, best_value: f64::INFINITY };
    let mut best = export_weights(model);

    for epoch in 1..=cfg.max_epochs {
        let lr = schedule.lr();
        opt.set_learning_rate(lr);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
        for idx in batches(&order, cfg.batch_size) {
            let pairs: Vec<(Image, Vec<bool>)> = idx
                .iter()
                .map(|&i| {
                    let s = &train[i];
                    if cfg.augment.enabled {
                        let d = AugmentDraw::sample(&cfg.augment, &mut aug_rng);
                        (d.apply(&s.image), d.warp_mask(size, size, &s.mask))
                    } else {
                        (s.image.clone(), s.mask.clone())
                    }
                })
                .collect();
            let images: Vec<&Image> = pairs.iter().map(|p| &p.0).collect();
            let masks: Vec<&[bool]> = pairs.iter().map(|p| p.1.as_slice()).collect();
            zero_grads(model);
            let z = model.forward(&image_batch::<F>(&images)?, Mode::Train);
            let (loss, grad) = bce_with_logits(&z, &mask_tensor::<F>(&masks, size, size));
            let loss = to_f64(loss);
            check_finite(loss, epoch)?;
            model.backward(&grad);
            check_grads(model, loss, epoch)?;
            opt.step(model);
            loss_sum += loss * idx.len() as f64;
            for (k, m) in masks.iter().enumerate() {
                let pred: Vec<bool> = z.plane(0, k).iter().map(|&v| v > F::zero()).collect();
                dice_sum += overlap(&pred, m)?.1;
            }
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, val_dice) = evaluate_segmenter(model, val)?;
        check_finite(val_loss, epoch)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_metric: dice_sum / train.len() as f64,
            val_loss,
            val_metric: val_dice,
            lr,
        };
        if record.val_loss < log.best_value {
            log.best_value = record.val_loss;
            log.best_epoch = epoch;
            best = export_weights(model);
        }
        on_epoch(&record);
        log.epochs.push(record);
        schedule.observe(train_loss);
    }
    let last = export_weights(model);
    apply_weights(model, &best);
    Ok(TrainOutcome { log, best, last })
}
