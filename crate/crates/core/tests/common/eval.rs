//! Tracking and OTB fixtures shared by the eval tests and the acceptance
//! report.

use vince::encoder::{EncoderConfig, EncoderParams};
use vince::eval::{otb_metrics, scripted_sequence, siamfc_track, BBox, Motion, TrackMetrics, TrackerConfig};

/// Three frames against a 60 × 80 box (diagonal 100 px, so normalized and
/// raw center errors coincide) with center errors 0, 10, 30 and IoUs 1,
/// 0.5, 0.1.
pub fn otb_hand_case() -> (Vec<BBox>, Vec<BBox>) {
    let gt = BBox::new(200.0, 150.0, 60.0, 80.0).unwrap();
    let pred = vec![
        gt,
        BBox::new(210.0, 150.0, 120.0, 80.0).unwrap(),
        BBox::new(230.0, 150.0, 600.0, 80.0).unwrap(),
    ];
    (pred, vec![gt; 3])
}

/// AUCs of [`otb_hand_case`], integrated by hand. Precision: 1/3 for
/// t = 0..9, 2/3 for t = 10..29, 1 for t = 30..50. Success: 1 for
/// t = 0..10, 2/3 for t = 11..50, 1/3 for t = 51..100.
pub const HAND_PRECISION_AUC: f64 = 113.0 / 153.0;
pub const HAND_SUCCESS_AUC: f64 = 163.0 / 303.0;

pub fn hand_case_matches() -> bool {
    let (pred, gt) = otb_hand_case();
    let m = otb_metrics(&pred, &gt).unwrap();
    (m.precision_auc - HAND_PRECISION_AUC).abs() < 1e-12
        && (m.raw_precision_auc - HAND_PRECISION_AUC).abs() < 1e-12
        && (m.success_auc - HAND_SUCCESS_AUC).abs() < 1e-12
}

/// Per-threshold loops over the raw boxes, with no shared helpers.
pub fn naive_otb(pred: &[BBox], gt: &[BBox]) -> (Vec<f64>, Vec<f64>) {
    let n = pred.len() as f64;
    let mut precision = Vec::new();
    for t in 0..=50 {
        let mut hits = 0;
        for (p, g) in pred.iter().zip(gt) {
            let dist = ((p.cx - g.cx).powi(2) + (p.cy - g.cy).powi(2)).sqrt();
            let diag = (g.w * g.w + g.h * g.h).sqrt();
            if dist / diag * 100.0 <= t as f64 {
                hits += 1;
            }
        }
        precision.push(hits as f64 / n);
    }
    let mut success = Vec::new();
    for t in 0..=100 {
        let mut hits = 0;
        for (p, g) in pred.iter().zip(gt) {
            let ix = ((p.cx + p.w / 2.0).min(g.cx + g.w / 2.0) - (p.cx - p.w / 2.0).max(g.cx - g.w / 2.0)).max(0.0);
            let iy = ((p.cy + p.h / 2.0).min(g.cy + g.h / 2.0) - (p.cy - p.h / 2.0).max(g.cy - g.h / 2.0)).max(0.0);
            let inter = ix * iy;
            let iou = inter / (p.w * p.h + g.w * g.h - inter);
            let ok = if t == 0 { iou > 0.0 } else { iou >= t as f64 / 100.0 };
            if ok {
                hits += 1;
            }
        }
        success.push(hits as f64 / n);
    }
    (precision, success)
}

/// Random-init encoder with the tracker's default input geometry.
pub fn tracking_encoder(seed: u64) -> EncoderParams {
    EncoderParams::init(&EncoderConfig::default(), seed).unwrap()
}

pub fn static_tracking(seed: u64) -> (TrackMetrics, Vec<f64>) {
    let seq = scripted_sequence(Motion::Static, 12, 128, 16, seed).unwrap();
    let pred = siamfc_track(&tracking_encoder(seed), &seq.frames, seq.boxes[0], &TrackerConfig::default()).unwrap();
    let errors = pred.iter().zip(&seq.boxes).map(|(p, g)| p.center_distance(g)).collect();
    (otb_metrics(&pred, &seq.boxes).unwrap(), errors)
}

/// Per-frame center errors on a linear trajectory, with the encoder stride.
pub fn linear_tracking_errors(seed: u64, dx: f64, dy: f64) -> (Vec<f64>, f64) {
    let seq = scripted_sequence(Motion::Linear { dx, dy }, 12, 160, 16, seed).unwrap();
    let params = tracking_encoder(seed);
    let pred = siamfc_track(&params, &seq.frames, seq.boxes[0], &TrackerConfig::default()).unwrap();
    let errors = pred.iter().zip(&seq.boxes).map(|(p, g)| p.center_distance(g)).collect();
    (errors, params.config().total_stride() as f64)
}
