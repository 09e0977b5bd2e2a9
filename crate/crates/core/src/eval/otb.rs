//! Precision and success curves in the style of the OTB benchmark.
//!
//! Center error is normalized by the ground-truth box diagonal and
//! expressed in pixels of a box whose diagonal is 100 px, so thresholds run
//! over 0..=50. Success at threshold 0 means any overlap (IoU > 0); above
//! that, IoU ≥ threshold. Each AUC is the mean of its curve.

use serde::{Deserialize, Serialize};

use super::track::BBox;
use crate::error::{Result, VinceError};

pub const PRECISION_THRESHOLDS: usize = 51;
pub const SUCCESS_THRESHOLDS: usize = 101;
const REFERENCE_DIAGONAL: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    /// Fraction of frames with normalized center error ≤ t, t = 0..=50.
    pub precision: Vec<f64>,
    /// Same, on raw pixel center error.
    pub raw_precision: Vec<f64>,
    /// Fraction of frames meeting IoU threshold t/100, t = 0..=100.
    pub success: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub precision_auc: f64,
    pub raw_precision_auc: f64,
    pub success_auc: f64,
    pub curves: Curves,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn normalized_center_error(pred: &BBox, gt: &BBox) -> f64 {
    pred.center_distance(gt) / gt.diagonal() * REFERENCE_DIAGONAL
}

pub fn otb_metrics(predicted: &[BBox], ground_truth: &[BBox]) -> Result<TrackMetrics> {
    if predicted.len() != ground_truth.len() {
        return Err(VinceError::dim(format!(
            "{} predictions for {} ground-truth boxes",
            predicted.len(),
            ground_truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(VinceError::Degenerate("no frames to score".into()));
    }
    let n = predicted.len() as f64;
    let pairs = || predicted.iter().zip(ground_truth);
    let norm_err: Vec<f64> = pairs().map(|(p, g)| normalized_center_error(p, g)).collect();
    let raw_err: Vec<f64> = pairs().map(|(p, g)| p.center_distance(g)).collect();
    let ious: Vec<f64> = pairs().map(|(p, g)| p.iou(g)).collect();

    let within = |errs: &[f64], t: f64| errs.iter().filter(|&&e| e <= t).count() as f64 / n;
    let precision: Vec<f64> = (0..PRECISION_THRESHOLDS).map(|t| within(&norm_err, t as f64)).collect();
    let raw_precision: Vec<f64> = (0..PRECISION_THRESHOLDS).map(|t| within(&raw_err, t as f64)).collect();
    let success: Vec<f64> = (0..SUCCESS_THRESHOLDS)
        .map(|t| {
            let thr = t as f64 / 100.0;
            let ok = ious
                .iter()
                .filter(|&&iou| if t == 0 { iou > 0.0 } else { iou >= thr })
                .count();
            ok as f64 / n
        })
        .collect();
    Ok(TrackMetrics {
        precision_auc: mean(&precision),
        raw_precision_auc: mean(&raw_precision),
        success_auc: mean(&success),
        curves: Curves {
            precision,
            raw_precision,
            success,
        },
    })
}
