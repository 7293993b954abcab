//! Offline classification metrics, region overlap scores and streaming
//! (online) detection metrics.
//!
//! Accuracy is the mean of the per-class one-vs-rest accuracies, i.e. the sum
//! of per-class accuracies normalized by the number of classes so that it
//! stays in `[0, 1]`. Classes whose precision or recall has a zero
//! denominator contribute 0 to the macro means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-vs-rest counts per class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    /// Samples counted.
    pub total: u64,
    /// Predictions equal to the ground truth.
    pub correct: u64,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        Self { tp: vec![0; classes], tn: vec![0; classes], fp: vec![0; classes], fn_: vec![0; classes], total: 0, correct: 0 }
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    pub fn add(&mut self, pred: usize, gt: usize) -> Result<()> {
        let n = self.classes();
        if pred >= n || gt >= n {
            return Err(Error::Class(pred.max(gt)));
        }
        for i in 0..n {
            match (pred == i, gt == i) {
                (true, true) => self.tp[i] += 1,
                (true, false) => self.fp[i] += 1,
                (false, true) => self.fn_[i] += 1,
                (false, false) => self.tn[i] += 1,
            }
        }
        self.total += 1;
        self.correct += u64::from(pred == gt);
        Ok(())
    }
}

pub fn confusion(preds: &[usize], gts: &[usize], classes: usize) -> Result<ConfusionCounts> {
    if preds.len() != gts.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), gts.len())));
    }
    let mut c = ConfusionCounts::new(classes);
    for (&p, &g) in preds.iter().zip(gts) {
        c.add(p, g)?;
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineMetrics {
    /// Macro mean of per-class one-vs-rest accuracies.
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    /// Harmonic mean of the macro precision and recall.
    pub f1: f64,
    /// Fraction of samples whose prediction equals the label.
    pub top1: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn offline_metrics(c: &ConfusionCounts) -> OfflineMetrics {
    let n = c.classes();
    let per_class: Vec<ClassMetrics> = (0..n)
        .map(|i| {
            let precision = ratio(c.tp[i], c.tp[i] + c.fp[i]);
            let recall = ratio(c.tp[i], c.tp[i] + c.fn_[i]);
            ClassMetrics {
                accuracy: ratio(c.tp[i] + c.tn[i], c.tp[i] + c.tn[i] + c.fp[i] + c.fn_[i]),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: c.tp[i] + c.fn_[i],
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| if n == 0 { 0.0 } else { per_class.iter().map(f).sum::<f64>() / n as f64 };
    let (precision, recall) = (mean(|m| m.precision), mean(|m| m.recall));
    OfflineMetrics {
        acc: mean(|m| m.accuracy),
        precision,
        recall,
        f1: harmonic(precision, recall),
        top1: ratio(c.correct, c.total),
        per_class,
    }
}

/// Overlap of two equally sized binary grids as `(IoU, Dice)`; two empty
/// grids score 1.
pub fn overlap(a: &[bool], b: &[bool]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("overlap of {} and {} cells", a.len(), b.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.iter().zip(b) {
        match (x, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok((1.0, 1.0));
    }
    Ok((tp as f64 / (tp + fp + fn_) as f64, 2.0 * tp as f64 / ((tp + fp) + (tp + fn_)) as f64))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSummary {
    pub dice_mean: f64,
    pub dice_std: f64,
    pub iou_mean: f64,
    pub iou_std: f64,
}

impl OverlapSummary {
    pub fn from_pairs(scores: &[(f64, f64)]) -> Self {
        let (iou_mean, iou_std) = mean_std(&scores.iter().map(|s| s.0).collect::<Vec<_>>());
        let (dice_mean, dice_std) = mean_std(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
        Self { dice_mean, dice_std, iou_mean, iou_std }
    }
}

/// How the online weight `w` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Ratio of ground-truth negatives to positives over the seen frames.
    GroundTruth,
    Fixed(f64),
}

/// Running sums for the streaming metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineCounts {
    pub classes: usize,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub frames: u64,
    pub gt_positives: u64,
    pub gt_negatives: u64,
    pub weight: WeightMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineSample {
    pub t: f64,
    pub ia: f64,
    pub ip: f64,
    pub wia: f64,
    pub cip: f64,
}

impl OnlineCounts {
    pub fn new(classes: usize, weight: WeightMode) -> Self {
        Self { classes, tp: 0, tn: 0, fp: 0, fn_: 0, frames: 0, gt_positives: 0, gt_negatives: 0, weight }
    }

    pub fn w(&self) -> f64 {
        match self.weight {
            WeightMode::Fixed(w) => w,
            WeightMode::GroundTruth if self.gt_positives == 0 => 1.0,
            WeightMode::GroundTruth => self.gt_negatives as f64 / self.gt_positives as f64,
        }
    }

    /// Adds one frame and returns the metrics over everything seen so far.
    pub fn update(&mut self, pred: usize, gt: usize, t: f64) -> Result<OnlineSample> {
        let n = self.classes as u64;
        if pred >= self.classes || gt >= self.classes {
            return Err(Error::Class(pred.max(gt)));
        }
        if pred == gt {
            self.tp += 1;
            self.tn += n - 1;
        } else {
            self.fp += 1;
            self.fn_ += 1;
            self.tn += n - 2;
        }
        self.frames += 1;
        self.gt_positives += 1;
        self.gt_negatives += n - 1;
        Ok(self.sample(t))
    }

    pub fn sample(&self, t: f64) -> OnlineSample {
        let denom = (self.frames * self.classes as u64) as f64;
        let w = self.w();
        let (tp, tn, fp) = (self.tp as f64, self.tn as f64, self.fp as f64);
        let safe = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        OnlineSample {
            t,
            ia: safe(tp + tn, denom),
            ip: safe(tp, tp + fp),
            wia: safe(w * tp + tn / w, denom),
            cip: safe(w * tp, w * tp + fp),
        }
    }
}

/// Replays a whole stream; `times[i]` is the instant of frame `i`.
pub fn online_trace(preds: &[usize], gts: &[usize], times: &[f64], classes: usize, weight: WeightMode) -> Result<Vec<OnlineSample>> {
    if preds.len() != gts.len() || preds.len() != times.len() {
        return Err(Error::Shape("online streams differ in length".into()));
    }
    let mut state = OnlineCounts::new(classes, weight);
    preds.iter().zip(gts).zip(times).map(|((&p, &g), &t)| state.update(p, g, t)).collect()
}

/// Evaluation output written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub offline: OfflineMetrics,
    #[serde(default)]
    pub online: Vec<OnlineSample>,
    #[serde(default)]
    pub overlap: Option<OverlapSummary>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap();
        assert!(c.tp.iter().all(|&v| v == 1) && c.tn.iter().all(|&v| v == 3));
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));

        let c = confusion(&[0, 0], &[0, 1], 4).unwrap();
        assert_eq!((c.tp[0], c.fp[0]), (1, 1));
        assert_eq!((c.fn_[1], c.tn[1]), (1, 1));

        let c = confusion(&[], &[], 4).unwrap();
        assert_eq!(c, ConfusionCounts::new(4));
        assert!(matches!(confusion(&[0], &[], 4), Err(Error::Shape(_))));
    }

    #[test]
    fn offline_examples() {
        let m = offline_metrics(&confusion(&[0, 1, 2, 3, 1], &[0, 1, 2, 3, 1], 4).unwrap());
        assert_eq!((m.acc, m.precision, m.recall, m.f1, m.top1), (1.0, 1.0, 1.0, 1.0, 1.0));

        let m = offline_metrics(&confusion(&[0, 0, 0, 0], &[0, 1, 2, 3], 4).unwrap());
        assert!((m.precision - 0.0625).abs() < 1e-15);
        assert!((m.recall - 0.25).abs() < 1e-15);
        assert!((m.top1 - 0.25).abs() < 1e-15);
        // class 0: 1/4 correct one-vs-rest; classes 1..3: 3/4 each
        assert!((m.acc - (0.25 + 3.0 * 0.75) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn overlap_examples() {
        let a = [true, true, true, true, false, false];
        assert_eq!(overlap(&a, &a).unwrap(), (1.0, 1.0));
        let b = [false, false, false, false, true, true];
        assert_eq!(overlap(&a, &b).unwrap(), (0.0, 0.0));
        let c = [true, true, false, false, true, true];
        let (iou, dice) = overlap(&a, &c).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-15 && (dice - 0.5).abs() < 1e-15);
        assert_eq!(overlap(&[false; 3], &[false; 3]).unwrap(), (1.0, 1.0));
        assert!(overlap(&a, &a[..2]).is_err());
    }

    #[test]
    fn online_examples() {
        let s = online_trace(&[1, 1, 2, 0], &[1, 1, 2, 0], &[0.0, 1.0, 2.0, 3.0], 4, WeightMode::GroundTruth).unwrap();
        assert!(s.iter().all(|x| x.ia == 1.0 && x.wia == 1.0));

        let s = online_trace(&[1, 2], &[1, 3], &[0.0, 1.0], 4, WeightMode::GroundTruth).unwrap();
        assert_eq!(s[1].ia, 0.75);
        assert_eq!(s[1].ip, 0.5);

        let s = online_trace(&[1, 2, 2, 0], &[1, 3, 2, 2], &[0.0; 4], 4, WeightMode::Fixed(1.0)).unwrap();
        assert!(s.iter().all(|x| x.ia == x.wia && x.ip == x.cip));
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[0.0, 1.0]), (0.5, 0.5));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
