//! Scalar training objectives and their weighted totals.
//!
//! Every loss here is a plain `f64` evaluation used for reporting and
//! as the reference the taped (differentiable) versions are checked
//! against. Per-hand terms are summed over the two hands in the
//! weighted totals.

use crate::event::SegLabel;
use crate::hand::HandParams;
use crate::math::V3;
use crate::sim::CameraIntrinsics;
use alloc::vec::Vec;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// 3D joint term weight.
    pub lambda_joints: f64,
    /// Hand-parameter term weight.
    pub lambda_mano: f64,
    /// Segmentation term weight.
    pub lambda_seg: f64,
    /// Inter-hand consistency weight.
    pub lambda_interhand: f64,
    /// Interpenetration weight.
    pub lambda_isec: f64,
    /// Pose regularizer factor.
    pub lambda_theta: f64,
    /// Shape regularizer factor.
    pub lambda_beta: f64,
    /// 2D joint term weight (label-free variant).
    pub lambda_joints2d: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_joints: 0.01,
            lambda_mano: 10.0,
            lambda_seg: 1.0,
            lambda_interhand: 100.0,
            lambda_isec: 100.0,
            lambda_theta: 0.025,
            lambda_beta: 25.0,
            lambda_joints2d: 0.01,
        }
    }
}

/// Loss evaluation errors.
#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    /// Two joint (or row) lists that must match in length do not.
    ShapeMismatch {
        /// Length of the first operand.
        expected: usize,
        /// Length of the second operand.
        got: usize,
    },
    /// A joint fell behind the camera during 2D projection.
    Projection(crate::hand::HandError),
}

impl core::fmt::Display for LossError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LossError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: {expected} vs {got}")
            }
            LossError::Projection(e) => write!(f, "projection failed: {e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LossError {}

fn check_len(a: usize, b: usize) -> Result<(), LossError> {
    if a == b {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch { expected: a, got: b })
    }
}

/// Mean unsquared Euclidean distance between corresponding joints,
/// in the joints' own units.
pub fn joint_loss(pred: &[V3], gt: &[V3]) -> Result<f64, LossError> {
    check_len(pred.len(), gt.len())?;
    let n = pred.len().max(1);
    Ok(pred.iter().zip(gt).map(|(p, g)| (*p - *g).norm()).sum::<f64>() / n as f64)
}

/// Parameter-space distance: squared norms of the pose, shape, and
/// rotation deltas plus the l1 norm of the translation delta.
pub fn mano_loss(pred: &HandParams, gt: &HandParams) -> f64 {
    let theta: f64 =
        pred.theta.iter().zip(&gt.theta).map(|(a, b)| (a - b) * (a - b)).sum();
    let beta: f64 = pred.beta.iter().zip(&gt.beta).map(|(a, b)| (a - b) * (a - b)).sum();
    let rot = (pred.rot - gt.rot).norm_sq();
    let d = pred.trans - gt.trans;
    let trans = d.x.abs() + d.y.abs() + d.z.abs();
    theta + beta + rot + trans
}

/// Outcome of [`seg_loss`]: the mean cross-entropy and how many rows
/// actually carried supervision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLossResult {
    /// Mean cross-entropy over supervised rows (0 when none).
    pub mean: f64,
    /// Rows that contributed: not padding and not unlabeled.
    pub supervised_rows: usize,
}

/// Mean softmax cross-entropy of per-event class logits.
///
/// Rows labeled [`SegLabel::NoClass`] and padding rows carry no
/// supervision and are excluded; when nothing remains the loss is zero
/// with `supervised_rows == 0`.
pub fn seg_loss(
    logits: &[[f64; 4]],
    labels: &[SegLabel],
    padded: &[bool],
) -> Result<SegLossResult, LossError> {
    check_len(logits.len(), labels.len())?;
    check_len(logits.len(), padded.len())?;
    let mut sum = 0.0;
    let mut rows = 0usize;
    for ((row, label), pad) in logits.iter().zip(labels).zip(padded) {
        if *pad || *label == SegLabel::NoClass {
            continue;
        }
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|l| (l - m).exp()).sum::<f64>().ln() + m;
        sum += log_z - row[label.index()];
        rows += 1;
    }
    let mean = if rows == 0 { 0.0 } else { sum / rows as f64 };
    Ok(SegLossResult { mean, supervised_rows: rows })
}

/// Consistency between the two hands: predicted shapes should agree,
/// and the predicted relative joint and translation offsets should
/// match the reference ones. The relative terms are invariant to
/// moving both predicted hands by one common vector.
pub fn interhand_loss(
    pred_left: &HandParams,
    pred_right: &HandParams,
    pred_joints_left: &[V3],
    pred_joints_right: &[V3],
    gt_left: &HandParams,
    gt_right: &HandParams,
    gt_joints_left: &[V3],
    gt_joints_right: &[V3],
) -> Result<f64, LossError> {
    check_len(pred_joints_left.len(), pred_joints_right.len())?;
    check_len(pred_joints_left.len(), gt_joints_left.len())?;
    check_len(gt_joints_left.len(), gt_joints_right.len())?;
    let shape: f64 = pred_left
        .beta
        .iter()
        .zip(&pred_right.beta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let n = pred_joints_left.len().max(1);
    let joints: f64 = pred_joints_left
        .iter()
        .zip(pred_joints_right)
        .zip(gt_joints_left.iter().zip(gt_joints_right))
        .map(|((pl, pr), (gl, gr))| ((*pl - *pr) - (*gl - *gr)).norm_sq())
        .sum::<f64>()
        / n as f64;
    let trans = ((pred_left.trans - pred_right.trans) - (gt_left.trans - gt_right.trans))
        .norm_sq();
    Ok(shape + joints + trans)
}

/// Quadratic parameter regularizer penalizing large pose and shape
/// coefficients.
pub fn tikhonov_reg(pred: &HandParams, lambda_theta: f64, lambda_beta: f64) -> f64 {
    let theta: f64 = pred.theta.iter().map(|t| t * t).sum();
    let beta: f64 = pred.beta.iter().map(|b| b * b).sum();
    lambda_theta * theta + lambda_beta * beta
}

/// Mean pixel distance between joints projected through two cameras:
/// predictions through `intr_pred`, references through `intr_gt`.
pub fn joints2d_loss(
    pred: &[V3],
    gt: &[V3],
    intr_pred: &CameraIntrinsics,
    intr_gt: &CameraIntrinsics,
) -> Result<f64, LossError> {
    check_len(pred.len(), gt.len())?;
    let p2 = crate::hand::project(pred, intr_pred).map_err(LossError::Projection)?;
    let g2 = crate::hand::project(gt, intr_gt).map_err(LossError::Projection)?;
    let n = pred.len().max(1);
    Ok(p2
        .iter()
        .zip(&g2)
        .map(|(p, g)| {
            let (dx, dy) = (p[0] - g[0], p[1] - g[1]);
            (dx * dx + dy * dy).sqrt()
        })
        .sum::<f64>()
        / n as f64)
}

/// Everything the network predicts for one event cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHandPrediction {
    /// Left-hand parameters.
    pub left: HandParams,
    /// Right-hand parameters.
    pub right: HandParams,
    /// Left-hand joints regressed from the posed mesh.
    pub joints_left: Vec<V3>,
    /// Right-hand joints regressed from the posed mesh.
    pub joints_right: Vec<V3>,
    /// Per-event class logits.
    pub seg_logits: Vec<[f64; 4]>,
}

/// Reference quantities for one event cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoHandTarget {
    /// Left-hand parameters.
    pub left: HandParams,
    /// Right-hand parameters.
    pub right: HandParams,
    /// Left-hand joints.
    pub joints_left: Vec<V3>,
    /// Right-hand joints.
    pub joints_right: Vec<V3>,
    /// Per-event class labels.
    pub labels: Vec<SegLabel>,
    /// Per-event padding flags (padded rows are unsupervised).
    pub padded: Vec<bool>,
}

/// Unweighted per-term values of one combined-objective evaluation.
///
/// `reg` already includes its internal factors; `total` applies the
/// remaining weights. [`LossBreakdown::contributions`] returns the
/// weighted addends, which sum to `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    /// Joint term (3D variant) or pixel term (label-free variant).
    pub joints: f64,
    /// Hand-parameter term, summed over hands (3D variant only).
    pub mano: f64,
    /// Segmentation term (3D variant only).
    pub seg: f64,
    /// Inter-hand consistency term.
    pub interhand: f64,
    /// Interpenetration term.
    pub isec: f64,
    /// Parameter regularizer, summed over hands, factors included.
    pub reg: f64,
    /// Supervised segmentation rows (0 when seg unused).
    pub supervised_rows: usize,
    /// Weighted total.
    pub total: f64,
}

impl LossBreakdown {
    /// Weighted `(name, value)` addends of `total`.
    pub fn contributions(&self, w: &LossWeights, label_free: bool) -> [(&'static str, f64); 6] {
        let joints_w = if label_free { w.lambda_joints2d } else { w.lambda_joints };
        [
            ("joints", joints_w * self.joints),
            ("mano", w.lambda_mano * self.mano),
            ("seg", w.lambda_seg * self.seg),
            ("interhand", w.lambda_interhand * self.interhand),
            ("isec", w.lambda_isec * self.isec),
            ("reg", self.reg),
        ]
    }
}

/// Combined supervised objective over both hands.
///
/// The interpenetration term is produced lazily so callers can skip
/// mesh collision work when its weight is zero.
pub fn total_loss(
    pred: &TwoHandPrediction,
    target: &TwoHandTarget,
    weights: &LossWeights,
    isec: impl FnOnce() -> f64,
) -> Result<LossBreakdown, LossError> {
    let joints = joint_loss(&pred.joints_left, &target.joints_left)?
        + joint_loss(&pred.joints_right, &target.joints_right)?;
    let mano = mano_loss(&pred.left, &target.left) + mano_loss(&pred.right, &target.right);
    let seg = seg_loss(&pred.seg_logits, &target.labels, &target.padded)?;
    let interhand = interhand_loss(
        &pred.left,
        &pred.right,
        &pred.joints_left,
        &pred.joints_right,
        &target.left,
        &target.right,
        &target.joints_left,
        &target.joints_right,
    )?;
    let reg = tikhonov_reg(&pred.left, weights.lambda_theta, weights.lambda_beta)
        + tikhonov_reg(&pred.right, weights.lambda_theta, weights.lambda_beta);
    let isec = if weights.lambda_isec > 0.0 { isec() } else { 0.0 };
    let total = weights.lambda_joints * joints
        + weights.lambda_mano * mano
        + weights.lambda_seg * seg.mean
        + weights.lambda_interhand * interhand
        + weights.lambda_isec * isec
        + reg;
    Ok(LossBreakdown {
        joints,
        mano,
        seg: seg.mean,
        interhand,
        isec,
        reg,
        supervised_rows: seg.supervised_rows,
        total,
    })
}

/// Label-free objective: the 3D joint, parameter, and segmentation
/// terms are replaced by a 2D reprojection term; inter-hand,
/// interpenetration, and regularizer terms remain.
pub fn real_total_loss(
    pred: &TwoHandPrediction,
    target: &TwoHandTarget,
    weights: &LossWeights,
    intr_pred: &CameraIntrinsics,
    intr_gt: &CameraIntrinsics,
    isec: impl FnOnce() -> f64,
) -> Result<LossBreakdown, LossError> {
    let joints2d = joints2d_loss(&pred.joints_left, &target.joints_left, intr_pred, intr_gt)?
        + joints2d_loss(&pred.joints_right, &target.joints_right, intr_pred, intr_gt)?;
    let interhand = interhand_loss(
        &pred.left,
        &pred.right,
        &pred.joints_left,
        &pred.joints_right,
        &target.left,
        &target.right,
        &target.joints_left,
        &target.joints_right,
    )?;
    let reg = tikhonov_reg(&pred.left, weights.lambda_theta, weights.lambda_beta)
        + tikhonov_reg(&pred.right, weights.lambda_theta, weights.lambda_beta);
    let isec = if weights.lambda_isec > 0.0 { isec() } else { 0.0 };
    let total = weights.lambda_joints2d * joints2d
        + weights.lambda_interhand * interhand
        + weights.lambda_isec * isec
        + reg;
    Ok(LossBreakdown {
        joints: joints2d,
        mano: 0.0,
        seg: 0.0,
        interhand,
        isec,
        reg,
        supervised_rows: 0,
        total,
    })
}
