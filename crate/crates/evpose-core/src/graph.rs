//! Differentiable mirrors of the hand deformation model and the
//! training objectives, recorded on a [`Tape`].
//!
//! Each builder reproduces its plain counterpart's arithmetic closely
//! enough that forward values agree to around machine precision, while
//! the tape provides reverse-mode gradients. Discrete choices (colliding
//! triangle pairs, cone-field gates, behind-camera checks) are resolved
//! from the current values and frozen into the graph, which matches the
//! almost-everywhere derivative of the underlying piecewise function.

use crate::collision::{cone_penalty, intersection_loss, ConeConfig, ConeField};
use crate::event::SegLabel;
use crate::hand::{
    HandAssets, HandParams, FULL_POSE_DIMS, NUM_ARTICULATED, NUM_JOINTS, PARAM_DIMS,
    POSE_COMPS, SHAPE_COMPS,
};
use crate::loss::{LossError, LossWeights, TwoHandTarget};
use crate::math::{Real, V3};
use crate::sim::CameraIntrinsics;
use crate::tape::{Axis, NodeId, Tape};
use alloc::vec::Vec;

/// Guard added under square roots whose argument can reach zero, small
/// enough to vanish at f64 reporting precision.
const SQRT_GUARD: f64 = 1e-24;

fn const_from<T: Real>(t: &mut Tape<T>, rows: usize, cols: usize, data: &[f64]) -> NodeId {
    t.constant(rows, cols, data.iter().map(|&v| T::from_f64(v)).collect())
}

fn const_rows<T: Real>(t: &mut Tape<T>, points: &[V3]) -> NodeId {
    let mut data = Vec::with_capacity(points.len() * 3);
    for p in points {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    const_from(t, points.len(), 3, &data)
}

/// Splits a 3-element node into its scalar components.
fn comps3<T: Real>(t: &mut Tape<T>, v: NodeId) -> [NodeId; 3] {
    let col = t.reshape(v, 3, 1);
    [
        t.gather_rows(col, &[0]),
        t.gather_rows(col, &[1]),
        t.gather_rows(col, &[2]),
    ]
}

fn row3<T: Real>(t: &mut Tape<T>, x: NodeId, y: NodeId, z: NodeId) -> NodeId {
    t.concat_cols(&[x, y, z])
}

/// Cross product of two 1x3 rows.
fn cross_row<T: Real>(t: &mut Tape<T>, a: NodeId, b: NodeId) -> NodeId {
    let [ax, ay, az] = comps3(t, a);
    let [bx, by, bz] = comps3(t, b);
    let ayz = t.mul(ay, bz);
    let azy = t.mul(az, by);
    let cx = t.sub(ayz, azy);
    let azx = t.mul(az, bx);
    let axz = t.mul(ax, bz);
    let cy = t.sub(azx, axz);
    let axy = t.mul(ax, by);
    let ayx = t.mul(ay, bx);
    let cz = t.sub(axy, ayx);
    row3(t, cx, cy, cz)
}

/// Dot product of two equally shaped 3-element nodes, as 1x1.
fn dot_row<T: Real>(t: &mut Tape<T>, a: NodeId, b: NodeId) -> NodeId {
    let prod = t.mul(a, b);
    let flat = t.reshape(prod, 1, 3);
    t.sum_reduce(flat, Axis::PerRow)
}

fn norm_sq_row<T: Real>(t: &mut Tape<T>, a: NodeId) -> NodeId {
    dot_row(t, a, a)
}

// ---------------------------------------------------------------------------
// Hand deformation model.

/// Per-tape constant nodes of one hand's model data.
pub struct HandConsts {
    template: NodeId,
    shape_cols: Vec<NodeId>,
    pose_basis: NodeId,
    pose_mean: NodeId,
    regressor: NodeId,
    skin_cols: Vec<NodeId>,
    parents: [i32; NUM_JOINTS],
}

impl HandConsts {
    /// Loads the model arrays onto a tape as constants.
    pub fn load<T: Real>(t: &mut Tape<T>, assets: &HandAssets) -> HandConsts {
        let v = assets.num_vertices();
        let template = const_rows(t, &assets.template);
        let shape_cols = assets.shape_basis.iter().map(|col| const_rows(t, col)).collect();
        let mut basis = Vec::with_capacity(FULL_POSE_DIMS * POSE_COMPS);
        for row in &assets.pose_basis {
            basis.extend_from_slice(row);
        }
        let pose_basis = const_from(t, FULL_POSE_DIMS, POSE_COMPS, &basis);
        let pose_mean = const_from(t, FULL_POSE_DIMS, 1, &assets.pose_mean);
        let mut reg = alloc::vec![0.0; NUM_JOINTS * v];
        for (j, row) in assets.joint_regressor.iter().enumerate() {
            for &(idx, w) in row {
                reg[j * v + idx] = w;
            }
        }
        let regressor = const_from(t, NUM_JOINTS, v, &reg);
        let skin_cols = (0..NUM_ARTICULATED)
            .map(|j| {
                let col: Vec<f64> = assets.skinning.iter().map(|w| w[j]).collect();
                const_from(t, v, 1, &col)
            })
            .collect();
        HandConsts {
            template,
            shape_cols,
            pose_basis,
            pose_mean,
            regressor,
            skin_cols,
            parents: assets.parents,
        }
    }
}

/// Axis-angle to rotation matrix on the tape, guarded so the zero
/// rotation stays finite and differentiable.
pub fn rodrigues_graph<T: Real>(t: &mut Tape<T>, aa: NodeId) -> NodeId {
    assert_eq!(t.shape(aa), (3, 1), "axis-angle must be 3x1");
    let sq = t.mul(aa, aa);
    let s2 = t.sum_reduce(sq, Axis::PerCol);
    let s2g = t.add_const(s2, T::from_f64(1e-30));
    let theta = t.sqrt_(s2g);
    let k = t.div(aa, theta);
    let kx = t.gather_rows(k, &[0]);
    let ky = t.gather_rows(k, &[1]);
    let kz = t.gather_rows(k, &[2]);
    let nkx = t.scale(kx, T::from_f64(-1.0));
    let nky = t.scale(ky, T::from_f64(-1.0));
    let nkz = t.scale(kz, T::from_f64(-1.0));
    let zero = t.scalar(T::zero());
    let r0 = row3(t, zero, nkz, ky);
    let r1 = row3(t, kz, zero, nkx);
    let r2 = row3(t, nky, kx, zero);
    let kmat = t.concat_rows(&[r0, r1, r2]);
    let kmat2 = t.matmul(kmat, kmat, false, false);
    let s = t.sin_(theta);
    let c = t.cos_(theta);
    let nc = t.scale(c, T::from_f64(-1.0));
    let one_minus_c = t.add_const(nc, T::one());
    let sk = t.mul(kmat, s);
    let ck2 = t.mul(kmat2, one_minus_c);
    let eye = const_from(t, 3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let partial = t.add(eye, sk);
    t.add(partial, ck2)
}

/// Taped counterpart of the plain posed-hand computation.
pub struct PosedHandGraph {
    /// Posed vertices, one row per vertex.
    pub vertices: NodeId,
    /// Regressed joints, one row per joint.
    pub joints: NodeId,
}

/// Shape offsets, pose decoding, forward kinematics, skinning, global
/// transform, and joint regression, all on the tape. `params` is the
/// flat 22x1 parameter vector in [`HandParams::to_flat`] order.
pub fn pose_mesh_graph<T: Real>(
    t: &mut Tape<T>,
    params: NodeId,
    c: &HandConsts,
) -> PosedHandGraph {
    assert_eq!(t.shape(params), (PARAM_DIMS, 1), "params must be 22x1");
    let theta = t.gather_rows(params, &[0, 1, 2, 3, 4, 5]);
    let rot_base = POSE_COMPS + SHAPE_COMPS;
    let rot = t.gather_rows(params, &[rot_base, rot_base + 1, rot_base + 2]);
    let trans = t.gather_rows(params, &[rot_base + 3, rot_base + 4, rot_base + 5]);

    let basis_prod = t.matmul(c.pose_basis, theta, false, false);
    let full_pose = t.add(basis_prod, c.pose_mean);

    let mut shaped = c.template;
    for (k, &col) in c.shape_cols.iter().enumerate() {
        let bk = t.gather_rows(params, &[POSE_COMPS + k]);
        let term = t.mul(col, bk);
        shaped = t.add(shaped, term);
    }
    let rest = t.matmul(c.regressor, shaped, false, false);

    let eye = const_from(t, 3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut rot_g = alloc::vec![eye; NUM_ARTICULATED];
    let mut pos_g = alloc::vec![NodeId::default(); NUM_ARTICULATED];
    pos_g[0] = t.gather_rows(rest, &[0]);
    for j in 1..NUM_ARTICULATED {
        let parent = c.parents[j] as usize;
        let aa = t.gather_rows(full_pose, &[3 * (j - 1), 3 * (j - 1) + 1, 3 * (j - 1) + 2]);
        let local = rodrigues_graph(t, aa);
        rot_g[j] = t.matmul(rot_g[parent], local, false, false);
        let rj = t.gather_rows(rest, &[j]);
        let rp = t.gather_rows(rest, &[parent]);
        let d = t.sub(rj, rp);
        let moved = t.matmul(d, rot_g[parent], false, true);
        pos_g[j] = t.add(moved, pos_g[parent]);
    }

    let mut skinned: Option<NodeId> = None;
    for j in 0..NUM_ARTICULATED {
        let rj = t.gather_rows(rest, &[j]);
        let centered = t.sub(shaped, rj);
        let rotated = t.matmul(centered, rot_g[j], false, true);
        let placed = t.add(rotated, pos_g[j]);
        let weighted = t.mul(placed, c.skin_cols[j]);
        skinned = Some(match skinned {
            None => weighted,
            Some(acc) => t.add(acc, weighted),
        });
    }
    let skinned = skinned.expect("at least one articulated joint");

    let global = rodrigues_graph(t, rot);
    let rotated = t.matmul(skinned, global, false, true);
    let trans_row = t.reshape(trans, 1, 3);
    let vertices = t.add(rotated, trans_row);
    let joints = t.matmul(c.regressor, vertices, false, false);
    PosedHandGraph { vertices, joints }
}

// ---------------------------------------------------------------------------
// Objectives.

/// Mean joint distance; see the plain version for the definition.
pub fn joint_loss_graph<T: Real>(t: &mut Tape<T>, pred: NodeId, gt: &[V3]) -> NodeId {
    let (n, c) = t.shape(pred);
    assert_eq!(c, 3, "joints must be Nx3");
    assert_eq!(n, gt.len(), "joint count mismatch");
    if n == 0 {
        return t.scalar(T::zero());
    }
    let gt_node = const_rows(t, gt);
    let d = t.sub(pred, gt_node);
    let sq = t.mul(d, d);
    let row_sums = t.sum_reduce(sq, Axis::PerRow);
    let guarded = t.add_const(row_sums, T::from_f64(SQRT_GUARD));
    let norms = t.sqrt_(guarded);
    let total = t.sum_all(norms);
    let count = t.scalar(T::from_f64(n as f64));
    t.div(total, count)
}

fn segment_mask(on: core::ops::Range<usize>) -> [f64; PARAM_DIMS] {
    let mut m = [0.0; PARAM_DIMS];
    for slot in &mut m[on] {
        *slot = 1.0;
    }
    m
}

/// Parameter-space distance to a reference parameter vector.
pub fn mano_loss_graph<T: Real>(t: &mut Tape<T>, pred: NodeId, gt: &HandParams) -> NodeId {
    assert_eq!(t.shape(pred), (PARAM_DIMS, 1), "params must be 22x1");
    let gt_node = const_from(t, PARAM_DIMS, 1, &gt.to_flat());
    let d = t.sub(pred, gt_node);
    let sq = t.mul(d, d);
    let sq_mask = const_from(t, PARAM_DIMS, 1, &segment_mask(0..POSE_COMPS + SHAPE_COMPS + 3));
    let masked_sq = t.mul(sq, sq_mask);
    let quad = t.sum_all(masked_sq);
    let ab = t.abs_(d);
    let ab_mask =
        const_from(t, PARAM_DIMS, 1, &segment_mask(POSE_COMPS + SHAPE_COMPS + 3..PARAM_DIMS));
    let masked_ab = t.mul(ab, ab_mask);
    let l1 = t.sum_all(masked_ab);
    t.add(quad, l1)
}

/// Mean cross-entropy over supervised rows, with the supervised-row
/// count; padding and unlabeled rows contribute nothing, to the value
/// or to the gradient.
pub fn seg_loss_graph<T: Real>(
    t: &mut Tape<T>,
    logits: NodeId,
    labels: &[SegLabel],
    padded: &[bool],
) -> (NodeId, usize) {
    let (m, c) = t.shape(logits);
    assert_eq!(c, 4, "logits must be Mx4");
    assert_eq!(m, labels.len(), "label count mismatch");
    assert_eq!(m, padded.len(), "padding count mismatch");
    let mut mask = alloc::vec![0.0; m];
    let mut onehot = alloc::vec![0.0; m * 4];
    let mut rows = 0usize;
    for (i, (label, pad)) in labels.iter().zip(padded).enumerate() {
        if *pad || *label == SegLabel::NoClass {
            continue;
        }
        mask[i] = 1.0;
        onehot[i * 4 + label.index()] = 1.0;
        rows += 1;
    }
    if rows == 0 {
        return (t.scalar(T::zero()), 0);
    }
    let maxes = t.max_reduce(logits, Axis::PerRow);
    let shifted = t.sub(logits, maxes);
    let e = t.exp_(shifted);
    let sums = t.sum_reduce(e, Axis::PerRow);
    let lnz = t.ln_(sums);
    let lse = t.add(lnz, maxes);
    let onehot_node = const_from(t, m, 4, &onehot);
    let picked_terms = t.mul(logits, onehot_node);
    let picked = t.sum_reduce(picked_terms, Axis::PerRow);
    let ce = t.sub(lse, picked);
    let mask_node = const_from(t, m, 1, &mask);
    let masked = t.mul(ce, mask_node);
    let total = t.sum_all(masked);
    let count = t.scalar(T::from_f64(rows as f64));
    (t.div(total, count), rows)
}

/// Inter-hand consistency; see the plain version for the definition.
#[allow(clippy::too_many_arguments)]
pub fn interhand_loss_graph<T: Real>(
    t: &mut Tape<T>,
    params_left: NodeId,
    params_right: NodeId,
    joints_left: NodeId,
    joints_right: NodeId,
    gt_left: &HandParams,
    gt_right: &HandParams,
    gt_joints_left: &[V3],
    gt_joints_right: &[V3],
) -> NodeId {
    let (n, _) = t.shape(joints_left);
    assert_eq!(t.shape(joints_right), (n, 3), "joint shape mismatch");
    assert_eq!(gt_joints_left.len(), n, "reference joint count mismatch");
    assert_eq!(gt_joints_right.len(), n, "reference joint count mismatch");
    let beta_rows: Vec<usize> = (POSE_COMPS..POSE_COMPS + SHAPE_COMPS).collect();
    let bl = t.gather_rows(params_left, &beta_rows);
    let br = t.gather_rows(params_right, &beta_rows);
    let bd = t.sub(bl, br);
    let bsq = t.mul(bd, bd);
    let shape = t.sum_all(bsq);

    let jd = t.sub(joints_left, joints_right);
    let gt_rel: Vec<V3> =
        gt_joints_left.iter().zip(gt_joints_right).map(|(l, r)| *l - *r).collect();
    let gt_rel_node = const_rows(t, &gt_rel);
    let rd = t.sub(jd, gt_rel_node);
    let rsq = t.mul(rd, rd);
    let row_sums = t.sum_reduce(rsq, Axis::PerRow);
    let total = t.sum_all(row_sums);
    let count = t.scalar(T::from_f64(n.max(1) as f64));
    let joints = t.div(total, count);

    let trans_rows: Vec<usize> = (POSE_COMPS + SHAPE_COMPS + 3..PARAM_DIMS).collect();
    let tl = t.gather_rows(params_left, &trans_rows);
    let tr = t.gather_rows(params_right, &trans_rows);
    let td = t.sub(tl, tr);
    let gt_td = gt_left.trans - gt_right.trans;
    let gt_td_node = const_from(t, 3, 1, &[gt_td.x, gt_td.y, gt_td.z]);
    let tdd = t.sub(td, gt_td_node);
    let tsq = t.mul(tdd, tdd);
    let trans = t.sum_all(tsq);

    let partial = t.add(shape, joints);
    t.add(partial, trans)
}

/// Quadratic pose/shape regularizer with its factors applied.
pub fn tikhonov_graph<T: Real>(
    t: &mut Tape<T>,
    params: NodeId,
    lambda_theta: f64,
    lambda_beta: f64,
) -> NodeId {
    assert_eq!(t.shape(params), (PARAM_DIMS, 1), "params must be 22x1");
    let sq = t.mul(params, params);
    let tmask = const_from(t, PARAM_DIMS, 1, &segment_mask(0..POSE_COMPS));
    let bmask = const_from(t, PARAM_DIMS, 1, &segment_mask(POSE_COMPS..POSE_COMPS + SHAPE_COMPS));
    let tsq = t.mul(sq, tmask);
    let bsq = t.mul(sq, bmask);
    let st = t.sum_all(tsq);
    let sb = t.sum_all(bsq);
    let wt = t.scale(st, T::from_f64(lambda_theta));
    let wb = t.scale(sb, T::from_f64(lambda_beta));
    t.add(wt, wb)
}

/// Mean reprojected pixel distance; the reference joints go through
/// their own camera outside the tape.
pub fn joints2d_loss_graph<T: Real>(
    t: &mut Tape<T>,
    pred: NodeId,
    gt: &[V3],
    intr_pred: &CameraIntrinsics,
    intr_gt: &CameraIntrinsics,
) -> Result<NodeId, LossError> {
    let (n, c) = t.shape(pred);
    assert_eq!(c, 3, "joints must be Nx3");
    assert_eq!(n, gt.len(), "joint count mismatch");
    if n == 0 {
        return Ok(t.scalar(T::zero()));
    }
    let current: Vec<V3> = t
        .value(pred)
        .chunks(3)
        .map(|p| V3::new(p[0].to_f64(), p[1].to_f64(), p[2].to_f64()))
        .collect();
    crate::hand::project(&current, intr_pred).map_err(LossError::Projection)?;
    let gt_px = crate::hand::project(gt, intr_gt).map_err(LossError::Projection)?;

    let select = |t: &mut Tape<T>, k: usize| {
        let mut e = [0.0; 3];
        e[k] = 1.0;
        const_from(t, 3, 1, &e)
    };
    let ex = select(t, 0);
    let ey = select(t, 1);
    let ez = select(t, 2);
    let xs = t.matmul(pred, ex, false, false);
    let ys = t.matmul(pred, ey, false, false);
    let zs = t.matmul(pred, ez, false, false);
    let fx_x = t.scale(xs, T::from_f64(intr_pred.fx));
    let px_raw = t.div(fx_x, zs);
    let px = t.add_const(px_raw, T::from_f64(intr_pred.cx));
    let fy_y = t.scale(ys, T::from_f64(intr_pred.fy));
    let py_raw = t.div(fy_y, zs);
    let py = t.add_const(py_raw, T::from_f64(intr_pred.cy));
    let gxd: Vec<f64> = gt_px.iter().map(|p| p[0]).collect();
    let gyd: Vec<f64> = gt_px.iter().map(|p| p[1]).collect();
    let gx = const_from(t, n, 1, &gxd);
    let gy = const_from(t, n, 1, &gyd);
    let dx = t.sub(px, gx);
    let dy = t.sub(py, gy);
    let dx2 = t.mul(dx, dx);
    let dy2 = t.mul(dy, dy);
    let sq = t.add(dx2, dy2);
    let guarded = t.add_const(sq, T::from_f64(SQRT_GUARD));
    let d = t.sqrt_(guarded);
    let total = t.sum_all(d);
    let count = t.scalar(T::from_f64(n as f64));
    Ok(t.div(total, count))
}

// ---------------------------------------------------------------------------
// Interpenetration.

struct TapedCone {
    center: NodeId,
    axis: NodeId,
    radius: NodeId,
    height: NodeId,
}

fn taped_cone<T: Real>(t: &mut Tape<T>, tri: &[NodeId; 3], height_scale: f64) -> TapedCone {
    let ab = t.sub(tri[1], tri[0]);
    let ac = t.sub(tri[2], tri[0]);
    let n = cross_row(t, ab, ac);
    let n2 = norm_sq_row(t, n);
    let ncab = cross_row(t, n, ab);
    let acn = cross_row(t, ac, n);
    let ab2 = norm_sq_row(t, ab);
    let ac2 = norm_sq_row(t, ac);
    let term1 = t.mul(ncab, ac2);
    let term2 = t.mul(acn, ab2);
    let summed = t.add(term1, term2);
    let denom = t.scale(n2, T::from_f64(2.0));
    let one = t.scalar(T::one());
    let recip = t.div(one, denom);
    let to_center = t.mul(summed, recip);
    let r2 = norm_sq_row(t, to_center);
    let radius = t.sqrt_(r2);
    let center = t.add(tri[0], to_center);
    let n_norm = t.sqrt_(n2);
    let recip_n = t.div(one, n_norm);
    let axis = t.mul(n, recip_n);
    let height = t.scale(radius, T::from_f64(height_scale));
    TapedCone { center, axis, radius, height }
}

fn taped_cone_term<T: Real>(t: &mut Tape<T>, cone: &TapedCone, p: NodeId) -> NodeId {
    let rel = t.sub(p, cone.center);
    let s = dot_row(t, rel, cone.axis);
    let s_over_h = t.div(s, cone.height);
    let axial = t.add_const(s_over_h, T::one());
    let proj = t.mul(cone.axis, s);
    let perp = t.sub(rel, proj);
    let rho2 = norm_sq_row(t, perp);
    let rho = t.sqrt_(rho2);
    let q = t.div(rho, cone.radius);
    let nq = t.scale(q, T::from_f64(-1.0));
    let radial = t.add_const(nq, T::one());
    t.mul(axial, radial)
}

/// Sum of symmetric cone penalties over currently colliding triangle
/// pairs of the two-hand union mesh.
///
/// The pair list and the cone gates are decided from the tape's current
/// vertex values; gradients treat them as locally constant, which is the
/// correct derivative away from the collision boundaries.
pub fn isec_loss_graph<T: Real>(
    t: &mut Tape<T>,
    verts_left: NodeId,
    faces_left: &[[usize; 3]],
    verts_right: NodeId,
    faces_right: &[[usize; 3]],
    config: &ConeConfig,
) -> NodeId {
    let read = |t: &Tape<T>, node: NodeId| -> Vec<V3> {
        t.value(node)
            .chunks(3)
            .map(|p| V3::new(p[0].to_f64(), p[1].to_f64(), p[2].to_f64()))
            .collect()
    };
    let vl = read(t, verts_left);
    let vr = read(t, verts_right);
    let result = intersection_loss(&vl, faces_left, &vr, faces_right, config);
    if result.pairs.is_empty() {
        return t.scalar(T::zero());
    }

    let nl = faces_left.len();
    let plain_tri = |idx: usize| -> [V3; 3] {
        if idx < nl {
            let f = faces_left[idx];
            [vl[f[0]], vl[f[1]], vl[f[2]]]
        } else {
            let f = faces_right[idx - nl];
            [vr[f[0]], vr[f[1]], vr[f[2]]]
        }
    };
    let taped_tri = |t: &mut Tape<T>, idx: usize| -> [NodeId; 3] {
        let (node, f) = if idx < nl {
            (verts_left, faces_left[idx])
        } else {
            (verts_right, faces_right[idx - nl])
        };
        [
            t.gather_rows(node, &[f[0]]),
            t.gather_rows(node, &[f[1]]),
            t.gather_rows(node, &[f[2]]),
        ]
    };

    let mut total: Option<NodeId> = None;
    for &(i, j) in &result.pairs {
        let (pa, pb) = (plain_tri(i), plain_tri(j));
        let (na, nb) = (taped_tri(t, i), taped_tri(t, j));
        let mut pair_sum: Option<NodeId> = None;
        for (src_plain, src_nodes, dst_plain, dst_nodes) in
            [(&pa, &na, &pb, &nb), (&pb, &nb, &pa, &na)]
        {
            let Some(cone) = ConeField::from_triangle(src_plain, config) else {
                continue;
            };
            let active: Vec<usize> =
                (0..3).filter(|&k| cone_penalty(dst_plain[k], &cone) > 0.0).collect();
            if active.is_empty() {
                continue;
            }
            let taped = taped_cone(t, src_nodes, config.height_scale);
            for &k in &active {
                let term = taped_cone_term(t, &taped, dst_nodes[k]);
                pair_sum = Some(match pair_sum {
                    None => term,
                    Some(acc) => t.add(acc, term),
                });
            }
        }
        let pair_node = pair_sum.unwrap_or_else(|| t.scalar(T::zero()));
        total = Some(match total {
            None => pair_node,
            Some(acc) => t.add(acc, pair_node),
        });
    }
    total.expect("non-empty pair list")
}

// ---------------------------------------------------------------------------
// Combined objectives.

/// The taped prediction bundle entering the combined objectives.
pub struct PredictionNodes {
    /// Left-hand flat parameters, 22x1.
    pub params_left: NodeId,
    /// Right-hand flat parameters, 22x1.
    pub params_right: NodeId,
    /// Left-hand joints, Nx3.
    pub joints_left: NodeId,
    /// Right-hand joints, Nx3.
    pub joints_right: NodeId,
    /// Per-event class logits, Mx4.
    pub seg_logits: NodeId,
}

/// Inputs for the interpenetration term of a combined objective.
pub struct IsecNodes<'a> {
    /// Posed left vertices, Vx3.
    pub verts_left: NodeId,
    /// Left faces.
    pub faces_left: &'a [[usize; 3]],
    /// Posed right vertices, Vx3.
    pub verts_right: NodeId,
    /// Right faces.
    pub faces_right: &'a [[usize; 3]],
    /// Cone sizing.
    pub config: ConeConfig,
}

/// Node handles of one combined-objective evaluation.
pub struct TotalLossGraph {
    /// Joint term (3D or pixel variant).
    pub joints: NodeId,
    /// Parameter term (zero node in the label-free variant).
    pub mano: NodeId,
    /// Segmentation term (zero node in the label-free variant).
    pub seg: NodeId,
    /// Inter-hand term.
    pub interhand: NodeId,
    /// Interpenetration term (zero node when disabled).
    pub isec: NodeId,
    /// Regularizer, factors included.
    pub reg: NodeId,
    /// Supervised segmentation rows.
    pub supervised_rows: usize,
    /// Weighted total.
    pub total: NodeId,
}

fn weighted_total<T: Real>(
    t: &mut Tape<T>,
    terms: &[(NodeId, f64)],
    reg: NodeId,
) -> NodeId {
    let mut acc: Option<NodeId> = None;
    for &(node, w) in terms {
        let scaled = t.scale(node, T::from_f64(w));
        acc = Some(match acc {
            None => scaled,
            Some(a) => t.add(a, scaled),
        });
    }
    let acc = acc.expect("at least one weighted term");
    t.add(acc, reg)
}

/// Supervised combined objective over both hands, on the tape.
///
/// The interpenetration inputs are only evaluated when the weight is
/// positive, like the plain version's lazy closure.
pub fn total_loss_graph<T: Real>(
    t: &mut Tape<T>,
    pred: &PredictionNodes,
    target: &TwoHandTarget,
    weights: &LossWeights,
    isec: Option<&IsecNodes<'_>>,
) -> TotalLossGraph {
    let jl = joint_loss_graph(t, pred.joints_left, &target.joints_left);
    let jr = joint_loss_graph(t, pred.joints_right, &target.joints_right);
    let joints = t.add(jl, jr);
    let ml = mano_loss_graph(t, pred.params_left, &target.left);
    let mr = mano_loss_graph(t, pred.params_right, &target.right);
    let mano = t.add(ml, mr);
    let (seg, supervised_rows) =
        seg_loss_graph(t, pred.seg_logits, &target.labels, &target.padded);
    let interhand = interhand_loss_graph(
        t,
        pred.params_left,
        pred.params_right,
        pred.joints_left,
        pred.joints_right,
        &target.left,
        &target.right,
        &target.joints_left,
        &target.joints_right,
    );
    let rl = tikhonov_graph(t, pred.params_left, weights.lambda_theta, weights.lambda_beta);
    let rr = tikhonov_graph(t, pred.params_right, weights.lambda_theta, weights.lambda_beta);
    let reg = t.add(rl, rr);
    let isec_node = match isec {
        Some(inputs) if weights.lambda_isec > 0.0 => isec_loss_graph(
            t,
            inputs.verts_left,
            inputs.faces_left,
            inputs.verts_right,
            inputs.faces_right,
            &inputs.config,
        ),
        _ => t.scalar(T::zero()),
    };
    let total = weighted_total(
        t,
        &[
            (joints, weights.lambda_joints),
            (mano, weights.lambda_mano),
            (seg, weights.lambda_seg),
            (interhand, weights.lambda_interhand),
            (isec_node, weights.lambda_isec),
        ],
        reg,
    );
    TotalLossGraph {
        joints,
        mano,
        seg,
        interhand,
        isec: isec_node,
        reg,
        supervised_rows,
        total,
    }
}

/// Label-free combined objective: pixel distances replace the 3D joint,
/// parameter, and segmentation terms.
pub fn real_total_loss_graph<T: Real>(
    t: &mut Tape<T>,
    pred: &PredictionNodes,
    target: &TwoHandTarget,
    weights: &LossWeights,
    intr_pred: &CameraIntrinsics,
    intr_gt: &CameraIntrinsics,
    isec: Option<&IsecNodes<'_>>,
) -> Result<TotalLossGraph, LossError> {
    let jl = joints2d_loss_graph(t, pred.joints_left, &target.joints_left, intr_pred, intr_gt)?;
    let jr =
        joints2d_loss_graph(t, pred.joints_right, &target.joints_right, intr_pred, intr_gt)?;
    let joints = t.add(jl, jr);
    let interhand = interhand_loss_graph(
        t,
        pred.params_left,
        pred.params_right,
        pred.joints_left,
        pred.joints_right,
        &target.left,
        &target.right,
        &target.joints_left,
        &target.joints_right,
    );
    let rl = tikhonov_graph(t, pred.params_left, weights.lambda_theta, weights.lambda_beta);
    let rr = tikhonov_graph(t, pred.params_right, weights.lambda_theta, weights.lambda_beta);
    let reg = t.add(rl, rr);
    let isec_node = match isec {
        Some(inputs) if weights.lambda_isec > 0.0 => isec_loss_graph(
            t,
            inputs.verts_left,
            inputs.faces_left,
            inputs.verts_right,
            inputs.faces_right,
            &inputs.config,
        ),
        _ => t.scalar(T::zero()),
    };
    let zero_mano = t.scalar(T::zero());
    let zero_seg = t.scalar(T::zero());
    let total = weighted_total(
        t,
        &[
            (joints, weights.lambda_joints2d),
            (interhand, weights.lambda_interhand),
            (isec_node, weights.lambda_isec),
        ],
        reg,
    );
    Ok(TotalLossGraph {
        joints,
        mano: zero_mano,
        seg: zero_seg,
        interhand,
        isec: isec_node,
        reg,
        supervised_rows: 0,
        total,
    })
}
