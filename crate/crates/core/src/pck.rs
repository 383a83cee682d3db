//! Keypoint-transfer accuracy (PCK) of a sparse correspondence set, densified
//! with moving least squares.

use serde::{Deserialize, Serialize};

use crate::document::AnnotationDocument;
use crate::error::{invalid, Result};
use crate::mls::{mls_map, ControlSet, Point2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub gt_a: [f64; 2],
    pub gt_b: [f64; 2],
    pub predicted: [f64; 2],
    pub distance: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckReport {
    pub alpha: f64,
    /// `alpha · max(height, width)` of image B, in pixels.
    pub threshold: f64,
    pub correct: usize,
    pub total: usize,
    pub pck: f64,
    pub points: Vec<PointResult>,
}

/// Transfers every annotated A keypoint through the MLS deformation defined
/// by `matches` (A pixel → B pixel) and counts predictions that land within
/// `alpha · max(H, W)` pixels of the B keypoint.
pub fn eval_pck(matches: &[(Point2, Point2)], annotations: &AnnotationDocument, alpha: f64) -> Result<PckReport> {
    if annotations.pairs.is_empty() {
        return invalid("annotation document has no keypoint pairs");
    }
    if alpha.is_nan() || alpha < 0.0 {
        return invalid(format!("alpha must be non-negative, got {alpha}"));
    }
    let controls = ControlSet::from_pairs_dedup(matches.iter().copied())?;
    let [w, h] = annotations.size_b;
    let threshold = alpha * w.max(h) as f64;
    let points: Vec<PointResult> = annotations
        .pairs
        .iter()
        .map(|kp| {
            let p = mls_map(Point2::new(kp.gt_a[0], kp.gt_a[1]), &controls);
            let distance = p.distance(Point2::new(kp.gt_b[0], kp.gt_b[1]));
            PointResult {
                gt_a: kp.gt_a,
                gt_b: kp.gt_b,
                predicted: [p.x, p.y],
                distance,
                correct: distance <= threshold,
            }
        })
        .collect();
    let correct = points.iter().filter(|p| p.correct).count();
    let total = points.len();
    Ok(PckReport { alpha, threshold, correct, total, pck: correct as f64 / total as f64, points })
}
