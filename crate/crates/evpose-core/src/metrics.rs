//! Evaluation metrics: keypoint-accuracy curves, their areas, and the
//! gated interpenetration percentage.
//!
//! Joint errors are measured in millimeters after one of two
//! alignments: per-hand root alignment (each hand's wrist subtracted)
//! or right-root alignment (the whole two-hand set shifted so the
//! predicted right wrist lands on the reference one).

use crate::hand::ROOT_JOINT;
use crate::math::V3;
use alloc::string::String;
use alloc::vec::Vec;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

/// Fraction-correct-keypoints curve over ascending thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct PckCurve {
    /// Ascending thresholds in millimeters.
    pub thresholds_mm: Vec<f64>,
    /// Fraction of errors at or under each threshold.
    pub values: Vec<f64>,
}

/// Default threshold grid: 0 to 100 mm in 1 mm steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..=100).map(|t| t as f64).collect()
}

/// Uniform threshold grid from 0 to `max_mm` in `step_mm` steps.
pub fn uniform_thresholds(max_mm: f64, step_mm: f64) -> Vec<f64> {
    let n = (max_mm / step_mm).round() as usize;
    (0..=n).map(|i| i as f64 * step_mm).collect()
}

/// Builds the curve: `value(t)` is the fraction of `errors_mm` at or
/// under `t`. An empty error list yields an all-ones curve.
pub fn pck_curve(errors_mm: &[f64], thresholds_mm: &[f64]) -> PckCurve {
    let mut sorted: Vec<f64> = errors_mm.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let values = thresholds_mm
        .iter()
        .map(|t| {
            if n == 0 {
                1.0
            } else {
                sorted.partition_point(|e| e <= t) as f64 / n as f64
            }
        })
        .collect();
    PckCurve { thresholds_mm: thresholds_mm.to_vec(), values }
}

/// Area under the curve by the trapezoidal rule, normalized by the
/// threshold range so a constant-one curve scores exactly 1.
pub fn auc(curve: &PckCurve) -> f64 {
    let t = &curve.thresholds_mm;
    let v = &curve.values;
    if t.len() < 2 {
        return v.first().copied().unwrap_or(0.0);
    }
    let mut area = 0.0;
    for i in 1..t.len() {
        area += 0.5 * (v[i] + v[i - 1]) * (t[i] - t[i - 1]);
    }
    area / (t[t.len() - 1] - t[0])
}

/// Per-joint millimeter errors after aligning one hand's wrist to the
/// reference wrist (subtracting each set's own root joint).
pub fn relative_errors_mm(pred: &[V3], gt: &[V3]) -> Vec<f64> {
    let (pr, gr) = (pred[ROOT_JOINT], gt[ROOT_JOINT]);
    pred.iter()
        .zip(gt)
        .map(|(p, g)| ((*p - pr) - (*g - gr)).norm() * 1000.0)
        .collect()
}

/// Per-joint millimeter errors over both hands after shifting the
/// whole predicted set so its right wrist matches the reference right
/// wrist. Left-hand errors come first in the output.
pub fn relative_root_errors_mm(
    pred_left: &[V3],
    pred_right: &[V3],
    gt_left: &[V3],
    gt_right: &[V3],
) -> Vec<f64> {
    let shift = gt_right[ROOT_JOINT] - pred_right[ROOT_JOINT];
    pred_left
        .iter()
        .zip(gt_left)
        .chain(pred_right.iter().zip(gt_right))
        .map(|(p, g)| ((*p + shift) - *g).norm() * 1000.0)
        .collect()
}

/// Outcome of [`gated_coll_percent`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedCollision {
    /// Mean interpenetration percentage over qualifying frames;
    /// `None` when no frame qualified.
    pub mean_percent: Option<f64>,
    /// Frames inside the proximity gate.
    pub qualifying: usize,
    /// Frames considered.
    pub total: usize,
}

/// Distance gate for the interpenetration metric, in meters.
pub const COLL_GATE_M: f64 = 0.05;

/// Mean collision percentage over frames whose hand roots sit closer
/// than [`COLL_GATE_M`]. The percentage callback runs only for
/// qualifying frames, in order.
pub fn gated_coll_percent(
    roots: &[(V3, V3)],
    mut percent_at: impl FnMut(usize) -> f64,
) -> GatedCollision {
    let mut sum = 0.0;
    let mut qualifying = 0usize;
    for (i, (l, r)) in roots.iter().enumerate() {
        if (*l - *r).norm() < COLL_GATE_M {
            sum += percent_at(i);
            qualifying += 1;
        }
    }
    GatedCollision {
        mean_percent: (qualifying > 0).then(|| sum / qualifying as f64),
        qualifying,
        total: roots.len(),
    }
}

/// Metrics of one evaluated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceEval {
    /// Sequence name.
    pub name: String,
    /// Area under the per-hand root-aligned curve.
    pub r_auc: f64,
    /// Area under the right-root-aligned curve.
    pub rr_auc: f64,
    /// Gated interpenetration summary.
    pub collision: GatedCollision,
    /// Windows evaluated.
    pub windows: usize,
}

/// Aggregate evaluation outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Area under the pooled per-hand root-aligned curve.
    pub r_auc: f64,
    /// Area under the pooled right-root-aligned curve.
    pub rr_auc: f64,
    /// Pooled per-hand root-aligned curve.
    pub r_curve: PckCurve,
    /// Pooled right-root-aligned curve.
    pub rr_curve: PckCurve,
    /// Gated interpenetration over all frames.
    pub collision: GatedCollision,
    /// Per-sequence breakdown.
    pub sequences: Vec<SequenceEval>,
}

impl EvalReport {
    /// Assembles a report from pooled error lists and per-sequence
    /// entries, computing both curves on `thresholds_mm`.
    pub fn assemble(
        r_errors_mm: &[f64],
        rr_errors_mm: &[f64],
        collision: GatedCollision,
        sequences: Vec<SequenceEval>,
        thresholds_mm: &[f64],
    ) -> EvalReport {
        let r_curve = pck_curve(r_errors_mm, thresholds_mm);
        let rr_curve = pck_curve(rr_errors_mm, thresholds_mm);
        EvalReport {
            r_auc: auc(&r_curve),
            rr_auc: auc(&rr_curve),
            r_curve,
            rr_curve,
            collision,
            sequences,
        }
    }
}
