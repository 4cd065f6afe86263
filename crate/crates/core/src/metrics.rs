//! Segmentation and classification metrics.
//!
//! Pixel metrics compare two masks of the same shape. Case-level metrics are
//! derived from [`ConfusionCounts`], where *positive* means treatment required.
//! A metric whose denominator is zero is reported as `None` and rendered as
//! `n/a`; it is never silently replaced by 0.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::image::Mask;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Overlap {
    both: usize,
    only_a: usize,
    only_b: usize,
    total: usize,
}

fn overlap(a: &Mask, b: &Mask) -> Result<Overlap> {
    a.ensure_same_shape(b)?;
    let mut o = Overlap {
        total: a.as_slice().len(),
        ..Overlap::default()
    };
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        match (x != 0, y != 0) {
            (true, true) => o.both += 1,
            (true, false) => o.only_a += 1,
            (false, true) => o.only_b += 1,
            (false, false) => {}
        }
    }
    Ok(o)
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let o = overlap(a, b)?;
    let denom = 2 * o.both + o.only_a + o.only_b;
    Ok(if denom == 0 {
        1.0
    } else {
        (2 * o.both) as f64 / denom as f64
    })
}

/// Intersection over union; two empty masks score 1.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let o = overlap(a, b)?;
    let union = o.both + o.only_a + o.only_b;
    Ok(if union == 0 {
        1.0
    } else {
        o.both as f64 / union as f64
    })
}

/// Fraction of pixels on which the masks agree.
pub fn pixel_accuracy(a: &Mask, b: &Mask) -> Result<f64> {
    let o = overlap(a, b)?;
    Ok((o.total - o.only_a - o.only_b) as f64 / o.total as f64)
}

/// Dice, IoU and pixel accuracy of one prediction against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
}

impl SegmentationScores {
    pub fn compute(pred: &Mask, truth: &Mask) -> Result<Self> {
        Ok(Self {
            dice: dice(pred, truth)?,
            iou: iou(pred, truth)?,
            accuracy: pixel_accuracy(pred, truth)?,
        })
    }

    /// Per-image scores averaged over a set; `None` for an empty set.
    pub fn mean(scores: &[SegmentationScores]) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let n = scores.len() as f64;
        Some(Self {
            dice: scores.iter().map(|s| s.dice).sum::<f64>() / n,
            iou: scores.iter().map(|s| s.iou).sum::<f64>() / n,
            accuracy: scores.iter().map(|s| s.accuracy).sum::<f64>() / n,
        })
    }
}

/// Case-level confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fp += 1,
            (Label::Negative, Label::Positive) => self.fn_ += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        ratio(self.fp, self.fp + self.tn)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Tallies predicted against actual labels.
pub fn confusion(predicted: &[Label], actual: &[Label]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} actual labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        c.record(p, a);
    }
    Ok(c)
}

/// Precision, recall (TPR), FPR, F1 and F-beta of a confusion matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fpr: Option<f64>,
    pub f1: Option<f64>,
    /// F-beta at [`ClassificationMetrics::beta`] (2 unless overridden).
    pub f_beta: Option<f64>,
    pub beta: f64,
}

/// `(1 + β²)·P·R / (β²·P + R)`, undefined when either input is undefined or
/// the denominator vanishes.
pub fn f_beta(precision: Option<f64>, recall: Option<f64>, beta: f64) -> Option<f64> {
    let (p, r) = (precision?, recall?);
    let b2 = beta * beta;
    let den = b2 * p + r;
    (den > 0.0).then(|| (1.0 + b2) * p * r / den)
}

pub fn classification_metrics(c: &ConfusionCounts, beta: f64) -> ClassificationMetrics {
    let precision = c.precision();
    let recall = c.recall();
    ClassificationMetrics {
        precision,
        recall,
        fpr: c.fpr(),
        f1: f_beta(precision, recall, 1.0),
        f_beta: f_beta(precision, recall, beta),
        beta,
    }
}

/// Fixed six-decimal rendering, `n/a` for undefined values.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "n/a".to_string(),
    }
}
