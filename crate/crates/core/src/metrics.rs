//! Segmentation metrics over hard label masks (confusion-matrix based) plus
//! a soft Dice used only for monitoring training curves.
//!
//! Empty-class convention: when a class appears in neither mask, its Dice
//! and IoU are 1.0 (nothing to get wrong); when it appears in exactly one,
//! the plain formulas already give 0.0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `count(t, p)` = number of pixels with true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        assert!(classes > 0, "need at least one class");
        ConfusionCounts {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    /// Tallies one pair of flat label masks (row-major, same length).
    pub fn from_masks(pred: &[u8], truth: &[u8], classes: usize) -> Result<Self> {
        let mut c = ConfusionCounts::new(classes);
        c.accumulate(pred, truth)?;
        Ok(c)
    }

    pub fn accumulate(&mut self, pred: &[u8], truth: &[u8]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::shape("confusion masks", &[pred.len()], &[truth.len()]));
        }
        for (&p, &t) in pred.iter().zip(truth) {
            if (p as usize) >= self.classes || (t as usize) >= self.classes {
                return Err(Error::invalid(format!(
                    "label {} outside 0..{}",
                    p.max(t),
                    self.classes
                )));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds another matrix of the same class count (accumulation across
    /// slices is associative).
    pub fn merge(&mut self, other: &ConfusionCounts) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::shape(
                "confusion merge",
                &[self.classes],
                &[other.classes],
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn num_pixels(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn tp(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    fn fp(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.count(t, c)).sum::<u64>() - self.tp(c)
    }

    fn fn_(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.count(c, p)).sum::<u64>() - self.tp(c)
    }
}

/// Fraction of pixels whose predicted label equals the true one.
pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    let total = counts.num_pixels();
    if total == 0 {
        return Err(Error::invalid("accuracy of an empty confusion matrix"));
    }
    let trace: u64 = (0..counts.classes()).map(|c| counts.count(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// `2 TP / (2 TP + FP + FN)`; 1.0 when the class is absent from both masks.
pub fn dice(counts: &ConfusionCounts, class: usize) -> f64 {
    let (tp, fp, fn_) = (counts.tp(class), counts.fp(class), counts.fn_(class));
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// `TP / (TP + FP + FN)`; 1.0 when the class is absent from both masks.
pub fn iou(counts: &ConfusionCounts, class: usize) -> f64 {
    let (tp, fp, fn_) = (counts.tp(class), counts.fp(class), counts.fn_(class));
    let denom = tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        tp as f64 / denom as f64
    }
}

fn micro(counts: &ConfusionCounts) -> (f64, f64) {
    let mut tp = 0u64;
    let mut fpfn = 0u64;
    for c in 0..counts.classes() {
        tp += counts.tp(c);
        fpfn += counts.fp(c) + counts.fn_(c);
    }
    if tp + fpfn == 0 {
        return (1.0, 1.0);
    }
    let dice = 2.0 * tp as f64 / (2 * tp + fpfn) as f64;
    let iou = tp as f64 / (tp + fpfn) as f64;
    (dice, iou)
}

/// Every aggregation variant of the hard metrics, serialized as one flat
/// JSON object. The headline aggregate used in run reports is the
/// background-inclusive macro average; published segmentation numbers
/// rarely say which aggregation they used, so all variants are emitted
/// side by side.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    /// Which partition the masks came from: "train" or "val".
    pub partition: String,
    pub ac: f64,
    pub dice_per_class: Vec<f64>,
    pub iou_per_class: Vec<f64>,
    pub dice_macro_incl_bg: f64,
    pub dice_macro_excl_bg: f64,
    pub iou_macro_incl_bg: f64,
    pub iou_macro_excl_bg: f64,
    /// Batch-global (micro) variants: all classes' TP/FP/FN pooled first.
    pub dice_micro: f64,
    pub iou_micro: f64,
}

pub fn report(counts: &ConfusionCounts, partition: &str) -> Result<MetricsReport> {
    let c = counts.classes();
    let dice_per_class: Vec<f64> = (0..c).map(|i| dice(counts, i)).collect();
    let iou_per_class: Vec<f64> = (0..c).map(|i| iou(counts, i)).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (dice_micro, iou_micro) = micro(counts);
    Ok(MetricsReport {
        partition: partition.to_string(),
        ac: accuracy(counts)?,
        dice_macro_incl_bg: mean(&dice_per_class),
        dice_macro_excl_bg: if c > 1 { mean(&dice_per_class[1..]) } else { mean(&dice_per_class) },
        iou_macro_incl_bg: mean(&iou_per_class),
        iou_macro_excl_bg: if c > 1 { mean(&iou_per_class[1..]) } else { mean(&iou_per_class) },
        dice_per_class,
        iou_per_class,
        dice_micro,
        iou_micro,
    })
}

/// Soft Dice over class probabilities: per-class `2 sum(p t) / (sum p + sum t)`
/// averaged over the classes present in the target, for monitoring training
/// curves only (reported metrics always use the hard variants). Rejects
/// probability tensors whose per-pixel channel sums stray from 1 by more
/// than 1e-6 and targets that are not one-hot.
pub fn soft_dice<S: Scalar>(probs: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    let (n, c, h, w) = probs.dims4()?;
    if !probs.same_shape(target) {
        return Err(Error::shape("soft_dice target", probs.shape(), target.shape()));
    }
    let plane = h * w;
    let tol = S::cast(1e-6);
    for ni in 0..n {
        for p in 0..plane {
            let mut psum = S::zero();
            let mut tsum = S::zero();
            for ci in 0..c {
                let idx = (ni * c + ci) * plane + p;
                psum += probs.data()[idx];
                let t = target.data()[idx];
                if t < S::zero() || t > S::one() {
                    return Err(Error::invalid("soft_dice target entries must be in [0, 1]"));
                }
                tsum += t;
            }
            if (psum - S::one()).abs() > tol {
                return Err(Error::invalid(format!(
                    "soft_dice probabilities sum to {} at a pixel",
                    psum.as_f64()
                )));
            }
            if (tsum - S::one()).abs() > S::cast(1e-12) {
                return Err(Error::invalid("soft_dice target is not one-hot"));
            }
        }
    }

    let mut acc = 0.0;
    let mut present = 0usize;
    for ci in 0..c {
        let mut inter = 0.0;
        let mut psum = 0.0;
        let mut tsum = 0.0;
        for ni in 0..n {
            let off = (ni * c + ci) * plane;
            for i in off..off + plane {
                let p = probs.data()[i].as_f64();
                let t = target.data()[i].as_f64();
                inter += p * t;
                psum += p;
                tsum += t;
            }
        }
        if tsum > 0.0 {
            acc += 2.0 * inter / (psum + tsum);
            present += 1;
        }
    }
    if present == 0 {
        return Err(Error::invalid("soft_dice target has no present class"));
    }
    Ok(acc / present as f64)
}
