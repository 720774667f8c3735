//! Detection evaluation: IoU matching into TP/FP/FN, precision, recall, F1,
//! precision-recall curves, all-point AP, mAP, AP over an IoU range and
//! size-bucketed AP.

mod fixture;
mod matching;
mod report;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxes::BoundingBox;

pub use fixture::{synthetic_from_counts, ClassCounts};
pub use matching::{match_detections, ClassMatches, LabeledDetection, MatchResult};
pub use report::{ap_by_size, ap_range, evaluate, ApRange, ClassReport, CountsReport, EvalOptions, EvalReport, SizeAp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("detection references image `{0}` which has no ground-truth entry")]
    UnknownImage(String),
    #[error("mean AP over zero classes")]
    NoClasses,
    #[error("invalid match config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// One annotated object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BoundingBox,
    pub class_id: usize,
}

/// Ground truth keyed by image id. Images with no objects map to an empty
/// list so detections on them count as false positives.
pub type GroundTruthSet = std::collections::BTreeMap<String, Vec<GroundTruth>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub iou_threshold: f64,
    /// Boxes with area below this are small.
    pub small_max_area: f64,
    /// Boxes with area below this (and not small) are medium; the rest large.
    pub medium_max_area: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            small_max_area: 32.0 * 32.0,
            medium_max_area: 96.0 * 96.0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(MetricsError::Config(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        if !(self.small_max_area >= 0.0 && self.small_max_area < self.medium_max_area) {
            return Err(MetricsError::Config(format!(
                "size thresholds {} / {} must satisfy 0 <= small < medium",
                self.small_max_area, self.medium_max_area
            )));
        }
        Ok(())
    }

    pub fn bucket(&self, area: f64) -> SizeBucket {
        if area < self.small_max_area {
            SizeBucket::Small
        } else if area < self.medium_max_area {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

/// `(TP / (TP + FP), TP / (TP + FN))`, each 0 on an empty denominator.
pub fn precision_recall(tp: usize, fp: usize, fn_: usize) -> (f64, f64) {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative precision/recall after each detection, given TP flags in
/// descending-score order. With no ground truth every recall is 0.
pub fn pr_curve(is_tp: &[bool], total_gt: usize) -> Vec<PrPoint> {
    let mut tp = 0usize;
    is_tp
        .iter()
        .enumerate()
        .map(|(k, &hit)| {
            tp += hit as usize;
            PrPoint {
                recall: if total_gt == 0 {
                    0.0
                } else {
                    tp as f64 / total_gt as f64
                },
                precision: tp as f64 / (k + 1) as f64,
            }
        })
        .collect()
}

/// Area under the precision envelope `p(r) = max{P_j : R_j ≥ r}`, summed
/// exactly over the recall steps of the curve.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    let mut env = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for (k, p) in curve.iter().enumerate().rev() {
        running = running.max(p.precision);
        env[k] = running;
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, e) in curve.iter().zip(&env) {
        if p.recall > prev_r {
            ap += (p.recall - prev_r) * e;
            prev_r = p.recall;
        }
    }
    ap.clamp(0.0, 1.0)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(MetricsError::NoClasses);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
