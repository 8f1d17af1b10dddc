//! Low-poly parametric two-hand model.
//!
//! A hand is a watertight triangle mesh (box palm plus five closed
//! finger tubes) deformed by shape blend offsets, articulated by
//! forward kinematics over 16 joints with linear blend skinning, and
//! finished by a global rigid transform. Joints are read back from the
//! posed vertices through a sparse linear regressor. Assets are
//! generated procedurally from a seed; the left hand is the mirror of
//! the right.

use crate::math::{box_muller, rodrigues, M3, V3};
use alloc::string::String;
use alloc::vec::Vec;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of regressed joints (wrist, 15 finger joints, 5 tips).
pub const NUM_JOINTS: usize = 21;
/// Number of articulated joints driven by kinematics (wrist + 15).
pub const NUM_ARTICULATED: usize = 16;
/// Number of rotated non-wrist joints in the full pose vector.
pub const NUM_POSED: usize = 15;
/// Dimension of the low-rank pose coefficient vector.
pub const POSE_COMPS: usize = 6;
/// Dimension of the shape coefficient vector.
pub const SHAPE_COMPS: usize = 10;
/// Dimension of the full pose vector (15 axis-angle triples).
pub const FULL_POSE_DIMS: usize = NUM_POSED * 3;
/// Total scalar parameters per hand: pose, shape, global rotation and
/// translation.
pub const PARAM_DIMS: usize = POSE_COMPS + SHAPE_COMPS + 3 + 3;
/// Index of the root (wrist) joint.
pub const ROOT_JOINT: usize = 0;

/// Which hand an asset set models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handedness {
    /// Left hand (mirrored geometry).
    Left,
    /// Right hand (canonical geometry).
    Right,
}

/// Pose, shape and rigid placement of one hand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandParams {
    /// Low-rank pose coefficients.
    pub theta: [f64; POSE_COMPS],
    /// Shape coefficients.
    pub beta: [f64; SHAPE_COMPS],
    /// Global rotation, axis-angle.
    pub rot: V3,
    /// Global translation in meters.
    pub trans: V3,
}

impl HandParams {
    /// All-zero parameters (rest pose at the origin).
    pub const ZERO: HandParams = HandParams {
        theta: [0.0; POSE_COMPS],
        beta: [0.0; SHAPE_COMPS],
        rot: V3::ZERO,
        trans: V3::ZERO,
    };

    /// Packs the parameters as `[theta, beta, rot, trans]`.
    pub fn to_flat(&self) -> [f64; PARAM_DIMS] {
        let mut out = [0.0; PARAM_DIMS];
        out[..POSE_COMPS].copy_from_slice(&self.theta);
        out[POSE_COMPS..POSE_COMPS + SHAPE_COMPS].copy_from_slice(&self.beta);
        let r = POSE_COMPS + SHAPE_COMPS;
        out[r] = self.rot.x;
        out[r + 1] = self.rot.y;
        out[r + 2] = self.rot.z;
        out[r + 3] = self.trans.x;
        out[r + 4] = self.trans.y;
        out[r + 5] = self.trans.z;
        out
    }

    /// Inverse of [`HandParams::to_flat`].
    pub fn from_flat(flat: &[f64; PARAM_DIMS]) -> HandParams {
        let mut theta = [0.0; POSE_COMPS];
        theta.copy_from_slice(&flat[..POSE_COMPS]);
        let mut beta = [0.0; SHAPE_COMPS];
        beta.copy_from_slice(&flat[POSE_COMPS..POSE_COMPS + SHAPE_COMPS]);
        let r = POSE_COMPS + SHAPE_COMPS;
        HandParams {
            theta,
            beta,
            rot: V3::new(flat[r], flat[r + 1], flat[r + 2]),
            trans: V3::new(flat[r + 3], flat[r + 4], flat[r + 5]),
        }
    }
}

/// One sparse row of the joint regressor: `(vertex index, weight)`
/// pairs summing to one.
pub type RegressorRow = Vec<(usize, f64)>;

/// Static per-hand model data.
#[derive(Debug, Clone, PartialEq)]
pub struct HandAssets {
    /// Which hand this is.
    pub handedness: Handedness,
    /// Rest template vertices.
    pub template: Vec<V3>,
    /// Triangle faces, counter-clockwise outward.
    pub faces: Vec<[usize; 3]>,
    /// Shape blend offsets: `SHAPE_COMPS` directions of per-vertex offsets.
    pub shape_basis: Vec<Vec<V3>>,
    /// Low-rank pose basis: `FULL_POSE_DIMS x POSE_COMPS`, row-major.
    pub pose_basis: Vec<[f64; POSE_COMPS]>,
    /// Mean full pose added after the basis product.
    pub pose_mean: Vec<f64>,
    /// Sparse joint regressor, one row per joint.
    pub joint_regressor: Vec<RegressorRow>,
    /// Skinning weights per vertex over the articulated joints.
    pub skinning: Vec<[f64; NUM_ARTICULATED]>,
    /// Parent of each joint; `-1` for the wrist root.
    pub parents: [i32; NUM_JOINTS],
}

/// A posed hand: deformed vertices plus regressed joints. Faces are
/// shared with the generating [`HandAssets`].
#[derive(Debug, Clone, PartialEq)]
pub struct PosedHand {
    /// Posed vertices.
    pub vertices: Vec<V3>,
    /// Regressed joint positions.
    pub joints: [V3; NUM_JOINTS],
}

/// Errors from asset validation and projection.
#[derive(Debug, Clone, PartialEq)]
pub enum HandError {
    /// An asset array has the wrong length.
    BadShape {
        /// Which array.
        what: &'static str,
        /// Expected length.
        expected: usize,
        /// Actual length.
        actual: usize,
    },
    /// A weight row does not sum to one or has negative entries.
    BadWeights {
        /// Which table.
        what: &'static str,
        /// Row index.
        row: usize,
    },
    /// The joint hierarchy is not a forward-ordered tree rooted at 0.
    BadHierarchy {
        /// Offending joint.
        joint: usize,
    },
    /// A face references a vertex out of range.
    BadFace {
        /// Offending face index.
        face: usize,
    },
    /// The mesh is not closed: some edge is not shared by exactly two
    /// consistently wound faces.
    NotWatertight {
        /// One offending directed edge.
        edge: (usize, usize),
    },
    /// Points at or behind the camera plane cannot be projected.
    BehindCamera {
        /// Indices of the offending points.
        indices: Vec<usize>,
    },
}

impl core::fmt::Display for HandError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            HandError::BadShape { what, expected, actual } => {
                write!(f, "{what}: expected length {expected}, got {actual}")
            }
            HandError::BadWeights { what, row } => {
                write!(f, "{what} row {row} is not a convex combination")
            }
            HandError::BadHierarchy { joint } => write!(f, "bad parent for joint {joint}"),
            HandError::BadFace { face } => write!(f, "face {face} references missing vertex"),
            HandError::NotWatertight { edge } => {
                write!(f, "mesh not watertight at edge {} -> {}", edge.0, edge.1)
            }
            HandError::BehindCamera { indices } => {
                write!(f, "{} points at or behind the camera: {:?}", indices.len(), indices)
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for HandError {}

impl HandAssets {
    /// Number of template vertices.
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    /// Checks array shapes, weight rows, hierarchy and watertightness.
    pub fn validate(&self) -> Result<(), HandError> {
        let v = self.template.len();
        let check = |what: &'static str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(HandError::BadShape { what, expected, actual })
            }
        };
        check("skinning", v, self.skinning.len())?;
        check("shape_basis", SHAPE_COMPS, self.shape_basis.len())?;
        for basis in &self.shape_basis {
            check("shape_basis column", v, basis.len())?;
        }
        check("pose_basis", FULL_POSE_DIMS, self.pose_basis.len())?;
        check("pose_mean", FULL_POSE_DIMS, self.pose_mean.len())?;
        check("joint_regressor", NUM_JOINTS, self.joint_regressor.len())?;
        for (row, entries) in self.joint_regressor.iter().enumerate() {
            let mut sum = 0.0;
            for &(idx, w) in entries {
                if idx >= v || w < -1e-12 {
                    return Err(HandError::BadWeights { what: "joint_regressor", row });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(HandError::BadWeights { what: "joint_regressor", row });
            }
        }
        for (row, weights) in self.skinning.iter().enumerate() {
            let mut sum = 0.0;
            for &w in weights {
                if w < -1e-12 {
                    return Err(HandError::BadWeights { what: "skinning", row });
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(HandError::BadWeights { what: "skinning", row });
            }
        }
        if self.parents[0] != -1 {
            return Err(HandError::BadHierarchy { joint: 0 });
        }
        for (j, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= j {
                return Err(HandError::BadHierarchy { joint: j });
            }
        }
        for (face, idx) in self.faces.iter().enumerate() {
            if idx.iter().any(|&i| i >= v) {
                return Err(HandError::BadFace { face });
            }
        }
        check_closed_mesh(&self.faces)?;
        Ok(())
    }
}

/// Verifies that every directed edge appears exactly once, which makes
/// the mesh closed and consistently wound.
pub fn check_closed_mesh(faces: &[[usize; 3]]) -> Result<(), HandError> {
    let mut edges: alloc::collections::BTreeMap<(usize, usize), i32> =
        alloc::collections::BTreeMap::new();
    for f in faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            *edges.entry((a, b)).or_insert(0) += 1;
        }
    }
    for (&(a, b), &count) in &edges {
        if count != 1 || edges.get(&(b, a)) != Some(&1) {
            return Err(HandError::NotWatertight { edge: (a, b) });
        }
    }
    Ok(())
}

/// Expands pose coefficients to per-joint axis-angle vectors:
/// `full = basis * theta + mean`.
pub fn decode_pose(theta: &[f64; POSE_COMPS], assets: &HandAssets) -> [V3; NUM_POSED] {
    let mut full = [0.0; FULL_POSE_DIMS];
    for (d, out) in full.iter_mut().enumerate() {
        let row = &assets.pose_basis[d];
        let mut acc = assets.pose_mean[d];
        for (k, t) in theta.iter().enumerate() {
            acc += row[k] * t;
        }
        *out = acc;
    }
    core::array::from_fn(|j| V3::new(full[3 * j], full[3 * j + 1], full[3 * j + 2]))
}

/// Applies shape blend offsets to the template.
pub fn shaped_vertices(beta: &[f64; SHAPE_COMPS], assets: &HandAssets) -> Vec<V3> {
    let mut out = assets.template.clone();
    for (k, basis) in assets.shape_basis.iter().enumerate() {
        let b = beta[k];
        if b == 0.0 {
            continue;
        }
        for (v, offset) in out.iter_mut().zip(basis.iter()) {
            *v += *offset * b;
        }
    }
    out
}

/// Applies the sparse joint regressor to a vertex set.
pub fn regress_joints(vertices: &[V3], assets: &HandAssets) -> [V3; NUM_JOINTS] {
    core::array::from_fn(|j| {
        let mut acc = V3::ZERO;
        for &(idx, w) in &assets.joint_regressor[j] {
            acc += vertices[idx] * w;
        }
        acc
    })
}

/// Full deformation model: shape offsets, pose decoding, forward
/// kinematics, linear blend skinning, then the global rigid transform.
/// Joints are regressed from the final posed vertices.
pub fn pose_mesh(params: &HandParams, assets: &HandAssets) -> PosedHand {
    let shaped = shaped_vertices(&params.beta, assets);
    let rest = regress_joints(&shaped, assets);
    let aa = decode_pose(&params.theta, assets);

    // Forward kinematics over the articulated joints. The wrist (0)
    // rotates only through the global transform, applied last.
    let mut rot_g = [M3::IDENTITY; NUM_ARTICULATED];
    let mut pos_g = [V3::ZERO; NUM_ARTICULATED];
    pos_g[0] = rest[0];
    for j in 1..NUM_ARTICULATED {
        let parent = assets.parents[j] as usize;
        let local = rodrigues(aa[j - 1]);
        rot_g[j] = rot_g[parent].mul_m(&local);
        pos_g[j] = rot_g[parent].mul_v(rest[j] - rest[parent]) + pos_g[parent];
    }

    let global = rodrigues(params.rot);
    let mut vertices = Vec::with_capacity(shaped.len());
    for (v, weights) in shaped.iter().zip(assets.skinning.iter()) {
        let mut skinned = V3::ZERO;
        for (j, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            skinned += (rot_g[j].mul_v(*v - rest[j]) + pos_g[j]) * w;
        }
        vertices.push(global.mul_v(skinned) + params.trans);
    }
    let joints = regress_joints(&vertices, assets);
    PosedHand { vertices, joints }
}

/// Projects camera-space points to pixel coordinates.
///
/// Fails if any point sits at or behind the camera plane, listing the
/// offending indices.
pub fn project(
    points: &[V3],
    intr: &crate::sim::CameraIntrinsics,
) -> Result<Vec<[f64; 2]>, HandError> {
    let bad: Vec<usize> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.z <= 1e-9)
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        return Err(HandError::BehindCamera { indices: bad });
    }
    Ok(points
        .iter()
        .map(|p| [intr.fx * p.x / p.z + intr.cx, intr.fy * p.y / p.z + intr.cy])
        .collect())
}

// ---------------------------------------------------------------------------
// Procedural asset generation.

const FINGERS: usize = 5;
const RING_VERTS: usize = 8;
const PALM_HALF_W: f64 = 0.041;
const PALM_LEN: f64 = 0.09;
const PALM_HALF_T: f64 = 0.0125;

struct FingerSpec {
    base: V3,
    dir: V3,
    lengths: [f64; 3],
    radius: f64,
}

/// Clearance between the palm surface and the nearest finger geometry.
///
/// Finger tubes are separate closed meshes, so any overlap with the palm
/// box would register as a genuine self-collision in the interpenetration
/// term and put a constant, un-optimizable floor under the loss. The
/// standoff keeps the rest template collision-free with margin to spare
/// over the template jitter.
const FINGER_STANDOFF: f64 = 0.004;

fn finger_specs() -> [FingerSpec; FINGERS] {
    let up = V3::new(0.0, 1.0, 0.0);
    [
        // Thumb, anchored just off the +x palm side. Its base ring tilts
        // back toward the palm, so the anchor needs more room than the
        // straight fingers: the ring reaches 0.785 * radius back in x,
        // plus the sunk base cap.
        FingerSpec {
            base: V3::new(0.049, 0.030, 0.0),
            dir: V3::new(0.62, 0.785, 0.0).normalized().unwrap(),
            lengths: [0.034, 0.030, 0.024],
            radius: 0.0080,
        },
        FingerSpec {
            base: V3::new(0.028, PALM_LEN + FINGER_STANDOFF, 0.0),
            dir: up,
            lengths: [0.036, 0.0225, 0.018],
            radius: 0.0070,
        },
        FingerSpec {
            base: V3::new(0.0095, PALM_LEN + FINGER_STANDOFF, 0.0),
            dir: up,
            lengths: [0.040, 0.025, 0.020],
            radius: 0.0072,
        },
        FingerSpec {
            base: V3::new(-0.0095, PALM_LEN + FINGER_STANDOFF, 0.0),
            dir: up,
            lengths: [0.036, 0.0225, 0.018],
            radius: 0.0068,
        },
        FingerSpec {
            base: V3::new(-0.028, PALM_LEN + FINGER_STANDOFF, 0.0),
            dir: up,
            lengths: [0.028, 0.0175, 0.014],
            radius: 0.0058,
        },
    ]
}

/// Appends a subdivided closed box to a mesh.
fn push_box(
    vertices: &mut Vec<V3>,
    faces: &mut Vec<[usize; 3]>,
    center: V3,
    half: V3,
    segments: [usize; 3],
) {
    let (nx, ny, nz) = (segments[0], segments[1], segments[2]);
    let base = vertices.len();
    let mut index: alloc::collections::BTreeMap<(usize, usize, usize), usize> =
        alloc::collections::BTreeMap::new();
    // Surface grid vertices only.
    for iz in 0..=nz {
        for iy in 0..=ny {
            for ix in 0..=nx {
                let on_surface = ix == 0 || ix == nx || iy == 0 || iy == ny || iz == 0 || iz == nz;
                if !on_surface {
                    continue;
                }
                let id = base + index.len();
                index.insert((ix, iy, iz), id);
                vertices.push(V3::new(
                    center.x - half.x + 2.0 * half.x * ix as f64 / nx as f64,
                    center.y - half.y + 2.0 * half.y * iy as f64 / ny as f64,
                    center.z - half.z + 2.0 * half.z * iz as f64 / nz as f64,
                ));
            }
        }
    }
    // Two triangles per surface quad; winding keeps outward normals.
    let mut quad = |a: usize, b: usize, c: usize, d: usize| {
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    };
    for iy in 0..ny {
        for ix in 0..nx {
            // z = -half (back): outward normal -z.
            let g = |ix, iy| index[&(ix, iy, 0)];
            quad(g(ix, iy), g(ix, iy + 1), g(ix + 1, iy + 1), g(ix + 1, iy));
            // z = +half (front): outward normal +z.
            let g = |ix, iy| index[&(ix, iy, nz)];
            quad(g(ix, iy), g(ix + 1, iy), g(ix + 1, iy + 1), g(ix, iy + 1));
        }
    }
    for iz in 0..nz {
        for ix in 0..nx {
            let g = |ix, iz| index[&(ix, 0, iz)];
            quad(g(ix, iz), g(ix + 1, iz), g(ix + 1, iz + 1), g(ix, iz + 1));
            let g = |ix, iz| index[&(ix, ny, iz)];
            quad(g(ix, iz), g(ix, iz + 1), g(ix + 1, iz + 1), g(ix + 1, iz));
        }
    }
    for iz in 0..nz {
        for iy in 0..ny {
            let g = |iy, iz| index[&(0, iy, iz)];
            quad(g(iy, iz), g(iy, iz + 1), g(iy + 1, iz + 1), g(iy + 1, iz));
            let g = |iy, iz| index[&(nx, iy, iz)];
            quad(g(iy, iz), g(iy + 1, iz), g(iy + 1, iz + 1), g(iy, iz + 1));
        }
    }
}

/// Appends a closed finger tube along `spec.dir` and returns the ring
/// parameter (distance along the finger) of every pushed vertex.
fn push_finger(
    vertices: &mut Vec<V3>,
    faces: &mut Vec<[usize; 3]>,
    spec: &FingerSpec,
) -> Vec<f64> {
    // Orthonormal frame around the finger axis.
    let d = spec.dir;
    let pick = if d.x.abs() < 0.9 { V3::new(1.0, 0.0, 0.0) } else { V3::new(0.0, 0.0, 1.0) };
    let u = d.cross(pick).normalized().unwrap();
    let w = d.cross(u);
    let (l1, l2, l3) = (spec.lengths[0], spec.lengths[1], spec.lengths[2]);
    let total = l1 + l2 + l3;
    // Rings at the base, mid-segment and joint stations, then a
    // shoulder ring just short of the tip.
    let stations = [
        0.0,
        0.5 * l1,
        l1,
        l1 + 0.5 * l2,
        l1 + l2,
        l1 + l2 + 0.55 * l3,
    ];
    let base_id = vertices.len();
    let mut params = Vec::new();
    for (s_i, &t) in stations.iter().enumerate() {
        let center = spec.base + d * t;
        // Taper slightly toward the tip.
        let r = spec.radius * (1.0 - 0.25 * t / total);
        for k in 0..RING_VERTS {
            let ang = core::f64::consts::TAU * k as f64 / RING_VERTS as f64;
            vertices.push(center + u * (r * ang.cos()) + w * (r * ang.sin()));
            params.push(t);
        }
        if s_i > 0 {
            let a0 = base_id + (s_i - 1) * RING_VERTS;
            let b0 = base_id + s_i * RING_VERTS;
            for k in 0..RING_VERTS {
                let k1 = (k + 1) % RING_VERTS;
                faces.push([a0 + k, b0 + k1, b0 + k]);
                faces.push([a0 + k, a0 + k1, b0 + k1]);
            }
        }
    }
    // Base cap (sunk slightly toward the palm) and tip cap.
    let base_center = vertices.len();
    vertices.push(spec.base - d * (0.3 * spec.radius));
    params.push(-0.3 * spec.radius);
    let tip_center = vertices.len();
    vertices.push(spec.base + d * total);
    params.push(total);
    for k in 0..RING_VERTS {
        let k1 = (k + 1) % RING_VERTS;
        faces.push([base_center, base_id + k1, base_id + k]);
        let last = base_id + (stations.len() - 1) * RING_VERTS;
        faces.push([tip_center, last + k, last + k1]);
    }
    params
}

fn segment_distance(p: V3, a: V3, b: V3) -> f64 {
    let ab = b - a;
    let denom = ab.norm_sq();
    let t = if denom < 1e-18 { 0.0 } else { ((p - a).dot(ab) / denom).clamp(0.0, 1.0) };
    (p - (a + ab * t)).norm()
}

/// Gram-Schmidt orthonormalization of flat basis columns, in place.
fn orthonormalize(cols: &mut [Vec<f64>]) {
    for i in 0..cols.len() {
        for j in 0..i {
            let dot: f64 = cols[i].iter().zip(cols[j].iter()).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(i);
            for (a, b) in tail[0].iter_mut().zip(head[j].iter()) {
                *a -= dot * b;
            }
        }
        let norm: f64 = cols[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in cols[i].iter_mut() {
            *v /= norm;
        }
    }
}

/// Builds the canonical right-hand assets for a seed, then mirrors them
/// if a left hand is requested. The same seed always produces bitwise
/// identical assets.
pub fn generate_toy_assets(seed: u64, handedness: Handedness) -> HandAssets {
    let right = generate_right(seed);
    match handedness {
        Handedness::Right => right,
        Handedness::Left => mirror_assets(&right),
    }
}

fn generate_right(seed: u64) -> HandAssets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6861_6e64);
    let mut vertices: Vec<V3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();

    push_box(
        &mut vertices,
        &mut faces,
        V3::new(0.0, PALM_LEN / 2.0, 0.0),
        V3::new(PALM_HALF_W, PALM_LEN / 2.0, PALM_HALF_T),
        [3, 4, 2],
    );
    let palm_verts = vertices.len();

    let specs = finger_specs();
    let mut finger_ranges = Vec::new();
    for spec in &specs {
        let start = vertices.len();
        push_finger(&mut vertices, &mut faces, spec);
        finger_ranges.push(start..vertices.len());
    }
    let nv = vertices.len();

    // Tiny seeded template jitter so distinct seeds give distinct hands.
    for v in vertices.iter_mut() {
        *v += V3::new(box_muller(&mut rng), box_muller(&mut rng), box_muller(&mut rng)) * 2e-4;
    }

    // Joints: wrist, then (proximal, middle, distal) per finger, then tips.
    let mut joints = [V3::ZERO; NUM_JOINTS];
    joints[0] = V3::new(0.0, 0.008, 0.0);
    let mut parents = [0i32; NUM_JOINTS];
    parents[0] = -1;
    for (f, spec) in specs.iter().enumerate() {
        let mut t = 0.0;
        for s in 0..3 {
            let j = 1 + f * 3 + s;
            joints[j] = spec.base + spec.dir * t;
            parents[j] = if s == 0 { 0 } else { (j - 1) as i32 };
            t += spec.lengths[s];
        }
        joints[16 + f] = spec.base + spec.dir * t;
        parents[16 + f] = (3 + f * 3) as i32;
    }

    // Sparse regressor: nearest template vertices, Gaussian-weighted.
    let joint_regressor: Vec<RegressorRow> = joints
        .iter()
        .map(|j| {
            let mut dists: Vec<(usize, f64)> =
                vertices.iter().enumerate().map(|(i, v)| (i, (*v - *j).norm())).collect();
            dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            let picked = &dists[..8];
            let sigma = picked[7].1.max(2e-3);
            let mut row: RegressorRow = picked
                .iter()
                .map(|&(i, d)| (i, (-(d / sigma) * (d / sigma)).exp()))
                .collect();
            let sum: f64 = row.iter().map(|(_, w)| w).sum();
            for (_, w) in row.iter_mut() {
                *w /= sum;
            }
            row.sort_by_key(|&(i, _)| i);
            row
        })
        .collect();

    // Skinning: Gaussian falloff to each bone segment, top-3, normalized.
    // Bone j spans joint j to its child (tips for distal joints); the
    // wrist bone spans the palm.
    let mut bones = [(V3::ZERO, V3::ZERO); NUM_ARTICULATED];
    bones[0] = (joints[0], V3::new(0.0, PALM_LEN * 0.9, 0.0));
    for f in 0..FINGERS {
        for s in 0..3 {
            let j = 1 + f * 3 + s;
            let child = if s == 2 { joints[16 + f] } else { joints[j + 1] };
            bones[j] = (joints[j], child);
        }
    }
    let skinning: Vec<[f64; NUM_ARTICULATED]> = vertices
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let palm = vi < palm_verts;
            let mut scored: Vec<(usize, f64)> = bones
                .iter()
                .enumerate()
                .map(|(j, (a, b))| {
                    let sigma = if j == 0 { 0.030 } else { 0.009 };
                    let d = segment_distance(*v, *a, *b);
                    // Palm vertices belong to the wrist bone.
                    let bias = if palm && j == 0 { 4.0 } else { 1.0 };
                    (j, bias * (-(d / sigma) * (d / sigma)).exp())
                })
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let mut weights = [0.0; NUM_ARTICULATED];
            let total: f64 = scored[..3].iter().map(|(_, w)| w).sum();
            if total < 1e-12 {
                weights[0] = 1.0;
            } else {
                for &(j, w) in &scored[..3] {
                    weights[j] = w / total;
                }
            }
            weights
        })
        .collect();

    // Shape basis: a scale direction plus random directions, all
    // orthonormalized, with decaying magnitudes.
    let centroid = vertices.iter().fold(V3::ZERO, |acc, v| acc + *v) * (1.0 / nv as f64);
    let mut shape_cols: Vec<Vec<f64>> = Vec::with_capacity(SHAPE_COMPS);
    let mut scale_col = Vec::with_capacity(3 * nv);
    for v in &vertices {
        let d = *v - centroid;
        scale_col.extend_from_slice(&[d.x, d.y, d.z]);
    }
    shape_cols.push(scale_col);
    for _ in 1..SHAPE_COMPS {
        shape_cols.push((0..3 * nv).map(|_| box_muller(&mut rng)).collect());
    }
    orthonormalize(&mut shape_cols);
    let shape_scales: [f64; SHAPE_COMPS] =
        core::array::from_fn(|k| if k == 0 { 0.06 } else { 0.03 * 0.85f64.powi(k as i32) });
    let shape_basis: Vec<Vec<V3>> = shape_cols
        .iter()
        .zip(shape_scales.iter())
        .map(|(col, s)| {
            (0..nv).map(|v| V3::new(col[3 * v], col[3 * v + 1], col[3 * v + 2]) * *s).collect()
        })
        .collect();

    // Pose basis: structured synergies (curl, spread, thumb opposition,
    // wave, proximal emphasis, twist) with a touch of seeded noise,
    // orthonormalized and scaled.
    let flex_axis = |f: usize| -> V3 {
        let d = specs[f].dir;
        d.cross(V3::new(0.0, 0.0, 1.0)).normalized().unwrap_or(V3::new(1.0, 0.0, 0.0))
    };
    let set = |col: &mut [f64], joint: usize, axis: V3, amount: f64| {
        // joint is the pose index 0..NUM_POSED (articulated joint - 1).
        col[3 * joint] += axis.x * amount;
        col[3 * joint + 1] += axis.y * amount;
        col[3 * joint + 2] += axis.z * amount;
    };
    let mut pose_cols: Vec<Vec<f64>> = alloc::vec![alloc::vec![0.0; FULL_POSE_DIMS]; POSE_COMPS];
    let seg_gain = [1.0, 0.8, 0.6];
    let mut curl = alloc::vec![0.0; FULL_POSE_DIMS];
    for f in 0..FINGERS {
        for s in 0..3 {
            set(&mut curl, f * 3 + s, flex_axis(f), seg_gain[s]);
        }
    }
    pose_cols[0].clone_from(&curl);
    let spread_gain = [0.0, 1.0, 0.35, -0.35, -1.0];
    for f in 0..FINGERS {
        set(&mut pose_cols[1], f * 3, V3::new(0.0, 0.0, 1.0), spread_gain[f]);
    }
    for s in 0..3 {
        set(&mut pose_cols[2], s, V3::new(-0.3, 0.25, -0.9).normalized().unwrap(), seg_gain[s]);
    }
    let wave_gain = [0.3, 1.0, -1.0, 1.0, -1.0];
    for f in 0..FINGERS {
        for s in 0..3 {
            set(&mut pose_cols[3], f * 3 + s, flex_axis(f), wave_gain[f] * seg_gain[s]);
        }
    }
    for f in 0..FINGERS {
        set(&mut pose_cols[4], f * 3, flex_axis(f), 1.0);
        set(&mut pose_cols[4], f * 3 + 1, flex_axis(f), -0.5);
    }
    for f in 0..FINGERS {
        set(&mut pose_cols[5], f * 3 + 1, specs[f].dir, 0.7);
    }
    for col in pose_cols.iter_mut() {
        for v in col.iter_mut() {
            *v += 0.02 * box_muller(&mut rng);
        }
    }
    orthonormalize(&mut pose_cols);
    let pose_scales = [0.55, 0.35, 0.30, 0.30, 0.25, 0.20];
    let pose_basis: Vec<[f64; POSE_COMPS]> = (0..FULL_POSE_DIMS)
        .map(|d| core::array::from_fn(|k| pose_cols[k][d] * pose_scales[k]))
        .collect();

    // Rest mean: a slight relaxed curl.
    let curl_norm: f64 = curl.iter().map(|v| v * v).sum::<f64>().sqrt();
    let pose_mean: Vec<f64> = curl.iter().map(|v| 0.10 * v / curl_norm).collect();

    let _ = finger_ranges;
    HandAssets {
        handedness: Handedness::Right,
        template: vertices,
        faces,
        shape_basis,
        pose_basis,
        pose_mean,
        joint_regressor,
        skinning,
        parents,
    }
}

/// Axis-angle under mirroring across the x = 0 plane.
fn mirror_aa(v: V3) -> V3 {
    V3::new(v.x, -v.y, -v.z)
}

/// Mirrors right-hand assets across the x = 0 plane: vertex x negated,
/// faces rewound, bases and pose data mirrored accordingly.
pub fn mirror_assets(right: &HandAssets) -> HandAssets {
    let flip = |v: V3| V3::new(-v.x, v.y, v.z);
    HandAssets {
        handedness: Handedness::Left,
        template: right.template.iter().map(|v| flip(*v)).collect(),
        faces: right.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        shape_basis: right
            .shape_basis
            .iter()
            .map(|col| col.iter().map(|v| flip(*v)).collect())
            .collect(),
        pose_basis: {
            let mut rows = right.pose_basis.clone();
            for j in 0..NUM_POSED {
                for k in 0..POSE_COMPS {
                    let aa = V3::new(
                        right.pose_basis[3 * j][k],
                        right.pose_basis[3 * j + 1][k],
                        right.pose_basis[3 * j + 2][k],
                    );
                    let m = mirror_aa(aa);
                    rows[3 * j][k] = m.x;
                    rows[3 * j + 1][k] = m.y;
                    rows[3 * j + 2][k] = m.z;
                }
            }
            rows
        },
        pose_mean: {
            let mut mean = right.pose_mean.clone();
            for j in 0..NUM_POSED {
                let aa =
                    V3::new(right.pose_mean[3 * j], right.pose_mean[3 * j + 1], right.pose_mean[3 * j + 2]);
                let m = mirror_aa(aa);
                mean[3 * j] = m.x;
                mean[3 * j + 1] = m.y;
                mean[3 * j + 2] = m.z;
            }
            mean
        },
        joint_regressor: right.joint_regressor.clone(),
        skinning: right.skinning.clone(),
        parents: right.parents,
    }
}

/// Human-readable joint name, used by reports and asset manifests.
pub fn joint_name(index: usize) -> String {
    use alloc::format;
    const FINGER_NAMES: [&str; FINGERS] = ["thumb", "index", "middle", "ring", "pinky"];
    if index == 0 {
        return String::from("wrist");
    }
    if index < 16 {
        let f = (index - 1) / 3;
        let s = (index - 1) % 3;
        return format!("{}_{}", FINGER_NAMES[f], ["proximal", "middle", "distal"][s]);
    }
    format!("{}_tip", FINGER_NAMES[index - 16])
}
