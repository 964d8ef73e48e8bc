//! Pixel-wise localization scores with forged pixels as the positive class.

mod report;

pub use report::{evaluate, evaluate_maps, predict_maps, quantize_prob, Aggregation, EvalReport, ImageEntry, ImageMetrics, Summary};

use thiserror::Error;

use crate::tensor::{Real, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("mask value {0} is not binary")]
    NonBinary(f64),
    #[error("threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{0}")]
    Report(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn from_masks(pred: &[u8], gt: &[u8]) -> Self {
        let mut c = Self::default();
        for (&p, &g) in pred.iter().zip(gt) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, tn: self.tn + o.tn, fn_: self.fn_ + o.fn_ }
    }
}

fn binary<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>, MetricError> {
    t.data()
        .iter()
        .map(|&v| {
            if v == T::zero() {
                Ok(0)
            } else if v == T::one() {
                Ok(1)
            } else {
                Err(MetricError::NonBinary(v.as_f64()))
            }
        })
        .collect()
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(), MetricError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MetricError::Shape(a.shape().to_vec(), b.shape().to_vec()))
    }
}

pub fn confusion<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts, MetricError> {
    same_shape(pred, gt)?;
    Ok(ConfusionCounts::from_masks(&binary(pred)?, &binary(gt)?))
}

/// `(TP + TN) / total`; zero for an empty count.
pub fn pixel_accuracy(c: &ConfusionCounts) -> f64 {
    if c.total() == 0 {
        return 0.0;
    }
    (c.tp + c.tn) as f64 / c.total() as f64
}

/// `2TP / (2TP + FP + FN)`, or 1 when there are no positives on either side.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

fn iou(intersection: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        intersection as f64 / union as f64
    }
}

pub fn forged_iou(c: &ConfusionCounts) -> f64 {
    iou(c.tp, c.tp + c.fp + c.fn_)
}

pub fn authentic_iou(c: &ConfusionCounts) -> f64 {
    iou(c.tn, c.tn + c.fp + c.fn_)
}

/// Mean of the forged and authentic IoU; a class with empty union counts as 1.
pub fn ciou_counts(c: &ConfusionCounts) -> f64 {
    (forged_iou(c) + authentic_iou(c)) / 2.0
}

pub fn ciou<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64, MetricError> {
    Ok(ciou_counts(&confusion(pred, gt)?))
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted half.
/// `None` unless both classes are present.
pub fn auc_scores(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of 1-based average ranks over positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k] != 0).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc<T: Real>(prob: &Tensor<T>, gt: &Tensor<T>) -> Result<Option<f64>, MetricError> {
    same_shape(prob, gt)?;
    Ok(auc_scores(&prob.to_f64(), &binary(gt)?))
}
