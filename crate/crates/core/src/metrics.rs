//! Confusion-matrix accumulation, the all/base/novel mIoU triple, and binary
//! classification scores used for boundary and affinity evaluation.
//!
//! Categories whose IoU denominator is zero (absent from both prediction and
//! ground truth) are left out of every mean rather than scored as 0 or 1.
//! On small synthetic fixtures this matters: a class that never appears does
//! not drag the mean down.

use std::ops::AddAssign;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::IGNORE_LABEL;
use crate::splits::CategorySplit;

/// `counts[g][p]`: pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn set(&mut self, gt: usize, pred: usize, count: u64) {
        self.counts[gt * self.num_classes + pred] = count;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one image. Pixels where either map holds [`IGNORE_LABEL`] are skipped.
    pub fn accumulate(&mut self, pred: ArrayView2<'_, u8>, gt: ArrayView2<'_, u8>) -> Result<()> {
        if pred.dim() != gt.dim() {
            return Err(Error::shape(format!(
                "prediction {:?} vs ground truth {:?}",
                pred.dim(),
                gt.dim()
            )));
        }
        let c = self.num_classes;
        let mut local = vec![0u64; c * c];
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if p == IGNORE_LABEL || g == IGNORE_LABEL {
                continue;
            }
            if p as usize >= c || g as usize >= c {
                return Err(Error::arg(format!(
                    "label {} outside 0..{c}",
                    if p as usize >= c { p } else { g }
                )));
            }
            local[g as usize * c + p as usize] += 1;
        }
        for (dst, src) in self.counts.iter_mut().zip(local) {
            *dst += src;
        }
        Ok(())
    }

    /// Per-category IoU; `None` where the category appears in neither map.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let row: u64 = (0..c).map(|p| self.get(k, p)).sum();
                let col: u64 = (0..c).map(|g| self.get(g, k)).sum();
                let denom = row + col - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.num_classes, rhs.num_classes, "confusion matrix size");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    pub all: Option<f64>,
    pub base: Option<f64>,
    pub novel: Option<f64>,
    pub per_category: Vec<Option<f64>>,
}

/// Mean IoU over all categories, the base group and the novel group.
pub fn miou_groups(cm: &ConfusionMatrix, split: &CategorySplit) -> Result<MiouReport> {
    if cm.num_classes() != split.num_categories {
        return Err(Error::shape(format!(
            "confusion matrix has {} classes, split has {}",
            cm.num_classes(),
            split.num_categories
        )));
    }
    let iou = cm.iou();
    if iou.iter().all(Option::is_none) {
        return Err(Error::Undefined(
            "every category is absent from both prediction and ground truth".into(),
        ));
    }
    let mean_over = |cats: &mut dyn Iterator<Item = usize>| {
        let vals: Vec<f64> = cats.filter_map(|k| iou[k]).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    Ok(MiouReport {
        all: mean_over(&mut (0..cm.num_classes())),
        base: mean_over(&mut split.base().iter().map(|&c| c as usize)),
        novel: mean_over(&mut split.novel().iter().map(|&c| c as usize)),
        per_category: iou,
    })
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    #[inline]
    pub fn record(&mut self, pred: bool, gt: bool) {
        match (pred, gt) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics(&self) -> BinaryMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryMetrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

impl AddAssign for BinaryCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.tp += rhs.tp;
        self.fp += rhs.fp;
        self.fn_ += rhs.fn_;
        self.tn += rhs.tn;
    }
}

/// Accuracy, precision, recall and F1. Any ratio with a zero denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}
