//! Triangle-mesh collision queries and the interpenetration penalty.
//!
//! Colliding triangle pairs are found with a median-split bounding
//! volume hierarchy and an exact triangle-triangle intersection test.
//! Each colliding pair is scored by a pair of conic distance fields
//! anchored at the triangles' circumcenters, giving a penalty that is
//! continuous in the vertex positions and usable as a training loss.

use crate::math::V3;
use alloc::vec::Vec;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    /// Componentwise minimum corner.
    pub min: V3,
    /// Componentwise maximum corner.
    pub max: V3,
}

impl Aabb {
    /// Empty box, ready to grow.
    pub fn empty() -> Self {
        let inf = f64::INFINITY;
        Aabb { min: V3::new(inf, inf, inf), max: V3::new(-inf, -inf, -inf) }
    }

    /// Grows the box to cover a point.
    pub fn grow(&mut self, p: V3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    /// Smallest box covering a triangle.
    pub fn of_triangle(t: &[V3; 3]) -> Self {
        let mut b = Aabb::empty();
        for v in t {
            b.grow(*v);
        }
        b
    }

    /// Union of two boxes.
    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.min(o.min), max: self.max.max(o.max) }
    }

    /// Inclusive overlap test: touching boxes count as overlapping.
    pub fn overlaps(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }

    /// Center point.
    pub fn center(&self) -> V3 {
        (self.min + self.max) * 0.5
    }

    /// Index of the longest axis.
    pub fn longest_axis(&self) -> usize {
        let d = self.max - self.min;
        if d.x >= d.y && d.x >= d.z {
            0
        } else if d.y >= d.z {
            1
        } else {
            2
        }
    }
}

/// Triangles with a cross product shorter than this are degenerate.
const DEGENERATE_AREA_EPS: f64 = 1e-12;

/// Errors from collision structures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollisionError {
    /// Every input triangle was degenerate.
    AllDegenerate,
}

impl core::fmt::Display for CollisionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CollisionError::AllDegenerate => write!(f, "all triangles are degenerate"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CollisionError {}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf {
        aabb: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        aabb: Aabb,
        left: usize,
        right: usize,
    },
}

impl BvhNode {
    fn aabb(&self) -> &Aabb {
        match self {
            BvhNode::Leaf { aabb, .. } | BvhNode::Inner { aabb, .. } => aabb,
        }
    }
}

/// Median-split bounding volume hierarchy over a triangle soup.
///
/// Degenerate (zero-area) triangles are skipped at build time and
/// reported in [`Bvh::skipped_degenerate`]; they never appear in pair
/// queries.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    /// Triangle indices grouped by leaf.
    order: Vec<usize>,
    root: usize,
    /// Indices of triangles skipped as degenerate.
    pub skipped_degenerate: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    /// Builds a hierarchy over a triangle soup. Fails only if no
    /// non-degenerate triangle remains.
    pub fn build(tris: &[[V3; 3]]) -> Result<Bvh, CollisionError> {
        let mut skipped = Vec::new();
        let mut order = Vec::new();
        for (i, t) in tris.iter().enumerate() {
            let n = (t[1] - t[0]).cross(t[2] - t[0]);
            if n.norm() < DEGENERATE_AREA_EPS {
                skipped.push(i);
            } else {
                order.push(i);
            }
        }
        if order.is_empty() {
            return Err(CollisionError::AllDegenerate);
        }
        let aabbs: Vec<Aabb> = tris.iter().map(Aabb::of_triangle).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        let root = Self::build_node(&mut nodes, &mut order, &aabbs, 0, n);
        Ok(Bvh { nodes, order, root, skipped_degenerate: skipped })
    }

    fn build_node(
        nodes: &mut Vec<BvhNode>,
        order: &mut [usize],
        aabbs: &[Aabb],
        start: usize,
        count: usize,
    ) -> usize {
        let slice = &order[start..start + count];
        let mut aabb = Aabb::empty();
        let mut centroid_bounds = Aabb::empty();
        for &i in slice {
            aabb = aabb.union(&aabbs[i]);
            centroid_bounds.grow(aabbs[i].center());
        }
        if count <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf { aabb, start, count });
            return nodes.len() - 1;
        }
        let axis = centroid_bounds.longest_axis();
        let slice = &mut order[start..start + count];
        slice.sort_unstable_by(|&a, &b| {
            aabbs[a]
                .center()
                .get(axis)
                .partial_cmp(&aabbs[b].center().get(axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let half = count / 2;
        let left = Self::build_node(nodes, order, aabbs, start, half);
        let right = Self::build_node(nodes, order, aabbs, start + half, count - half);
        let aabb = nodes[left].aabb().union(nodes[right].aabb());
        nodes.push(BvhNode::Inner { aabb, left, right });
        nodes.len() - 1
    }

    fn leaf_tris<'a>(&'a self, node: &BvhNode) -> &'a [usize] {
        match node {
            BvhNode::Leaf { start, count, .. } => &self.order[*start..*start + *count],
            BvhNode::Inner { .. } => &[],
        }
    }
}

/// Exact intersecting-pair query between two triangle soups.
///
/// Returns every `(i, j)` whose triangles geometrically intersect
/// (touching counts), sorted lexicographically. Degenerate triangles
/// never participate.
pub fn colliding_pairs(
    bvh_a: &Bvh,
    tris_a: &[[V3; 3]],
    bvh_b: &Bvh,
    tris_b: &[[V3; 3]],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut stack = alloc::vec![(bvh_a.root, bvh_b.root)];
    while let Some((na, nb)) = stack.pop() {
        let (a, b) = (&bvh_a.nodes[na], &bvh_b.nodes[nb]);
        if !a.aabb().overlaps(b.aabb()) {
            continue;
        }
        match (a, b) {
            (BvhNode::Leaf { .. }, BvhNode::Leaf { .. }) => {
                for &i in bvh_a.leaf_tris(a) {
                    for &j in bvh_b.leaf_tris(b) {
                        if Aabb::of_triangle(&tris_a[i]).overlaps(&Aabb::of_triangle(&tris_b[j]))
                            && tri_tri_intersect(&tris_a[i], &tris_b[j])
                        {
                            out.push((i, j));
                        }
                    }
                }
            }
            (BvhNode::Inner { left, right, .. }, _) => {
                stack.push((*left, nb));
                stack.push((*right, nb));
            }
            (_, BvhNode::Inner { left, right, .. }) => {
                stack.push((na, *left));
                stack.push((na, *right));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Intersecting pairs within one soup, excluding self-pairs and any
/// pair the filter rejects (used for mesh adjacency). Returns `i < j`
/// pairs, sorted.
pub fn self_colliding_pairs(
    bvh: &Bvh,
    tris: &[[V3; 3]],
    mut allow: impl FnMut(usize, usize) -> bool,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut stack = alloc::vec![(bvh.root, bvh.root)];
    while let Some((na, nb)) = stack.pop() {
        let (a, b) = (&bvh.nodes[na], &bvh.nodes[nb]);
        if !a.aabb().overlaps(b.aabb()) {
            continue;
        }
        match (a, b) {
            (BvhNode::Leaf { .. }, BvhNode::Leaf { .. }) => {
                // Leaf contents follow centroid order, not index order,
                // so normalize each pair instead of requiring i < j.
                let diagonal = na == nb;
                for &i in bvh.leaf_tris(a) {
                    for &j in bvh.leaf_tris(b) {
                        if i == j || (diagonal && i > j) {
                            continue;
                        }
                        let pair = (i.min(j), i.max(j));
                        if allow(pair.0, pair.1)
                            && Aabb::of_triangle(&tris[i]).overlaps(&Aabb::of_triangle(&tris[j]))
                            && tri_tri_intersect(&tris[i], &tris[j])
                        {
                            out.push(pair);
                        }
                    }
                }
            }
            (BvhNode::Inner { left, right, .. }, _) => {
                // Skip the mirrored half of the symmetric traversal.
                if na != nb {
                    stack.push((*left, nb));
                    stack.push((*right, nb));
                } else {
                    stack.push((*left, *left));
                    stack.push((*left, *right));
                    stack.push((*right, *right));
                }
            }
            (_, BvhNode::Inner { left, right, .. }) => {
                stack.push((na, *left));
                stack.push((na, *right));
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

// ---------------------------------------------------------------------------
// Exact triangle-triangle intersection (interval method with a 2D
// fallback for coplanar triangles). Touching configurations count as
// intersecting.

fn signed_dists(n: V3, d: f64, t: &[V3; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(t.iter()) {
        let dist = n.dot(*v) + d;
        *o = if dist.abs() < 1e-12 { 0.0 } else { dist };
    }
    out
}

/// Interval of a triangle along the intersection line, `None` when the
/// triangle is coplanar with the other's plane. The caller has already
/// rejected all-strictly-one-side configurations.
fn interval(p: [f64; 3], d: [f64; 3]) -> Option<(f64, f64)> {
    // Pick the vertex alone on its side of the other plane.
    let a = if d[0] * d[1] > 0.0 {
        2
    } else if d[0] * d[2] > 0.0 {
        1
    } else if d[1] * d[2] > 0.0 || d[0] != 0.0 {
        0
    } else if d[1] != 0.0 {
        1
    } else if d[2] != 0.0 {
        2
    } else {
        return None;
    };
    let (b, c) = ((a + 1) % 3, (a + 2) % 3);
    let cross = |i: usize| {
        if d[i] == d[a] {
            p[i]
        } else {
            p[i] + (p[a] - p[i]) * d[i] / (d[i] - d[a])
        }
    };
    let (x, y) = (cross(b), cross(c));
    Some((x.min(y), x.max(y)))
}

/// Exact triangle-triangle intersection test; touching and coplanar
/// overlaps count, degenerate inputs return `false`.
pub fn tri_tri_intersect(t1: &[V3; 3], t2: &[V3; 3]) -> bool {
    let n1 = (t1[1] - t1[0]).cross(t1[2] - t1[0]);
    let n2 = (t2[1] - t2[0]).cross(t2[2] - t2[0]);
    if n1.norm() < DEGENERATE_AREA_EPS || n2.norm() < DEGENERATE_AREA_EPS {
        return false;
    }
    let d1 = -n1.dot(t1[0]);
    let d2 = -n2.dot(t2[0]);
    let dv = signed_dists(n1, d1, t2);
    if (dv[0] > 0.0 && dv[1] > 0.0 && dv[2] > 0.0)
        || (dv[0] < 0.0 && dv[1] < 0.0 && dv[2] < 0.0)
    {
        return false;
    }
    let du = signed_dists(n2, d2, t1);
    if (du[0] > 0.0 && du[1] > 0.0 && du[2] > 0.0)
        || (du[0] < 0.0 && du[1] < 0.0 && du[2] < 0.0)
    {
        return false;
    }
    let dir = n1.cross(n2);
    let axis = if dir.x.abs() >= dir.y.abs() && dir.x.abs() >= dir.z.abs() {
        0
    } else if dir.y.abs() >= dir.z.abs() {
        1
    } else {
        2
    };
    let p1 = [t1[0].get(axis), t1[1].get(axis), t1[2].get(axis)];
    let p2 = [t2[0].get(axis), t2[1].get(axis), t2[2].get(axis)];
    match (interval(p1, du), interval(p2, dv)) {
        (Some((a0, a1)), Some((b0, b1))) => a1 >= b0 && b1 >= a0,
        _ => coplanar_tri_tri(n1, t1, t2),
    }
}

fn project_2d(n: V3, v: V3) -> [f64; 2] {
    // Drop the dominant normal axis.
    let (ax, ay, az) = (n.x.abs(), n.y.abs(), n.z.abs());
    if ax >= ay && ax >= az {
        [v.y, v.z]
    } else if ay >= az {
        [v.x, v.z]
    } else {
        [v.x, v.y]
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) - 1e-12
        && p[0] <= a[0].max(b[0]) + 1e-12
        && p[1] >= a[1].min(b[1]) - 1e-12
        && p[1] <= a[1].max(b[1]) + 1e-12
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let (o1, o2) = (orient(a, b, c), orient(a, b, d));
    let (o3, o4) = (orient(c, d, a), orient(c, d, b));
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn point_in_tri(p: [f64; 2], t: &[[f64; 2]; 3]) -> bool {
    let (o1, o2, o3) = (orient(t[0], t[1], p), orient(t[1], t[2], p), orient(t[2], t[0], p));
    (o1 >= 0.0 && o2 >= 0.0 && o3 >= 0.0) || (o1 <= 0.0 && o2 <= 0.0 && o3 <= 0.0)
}

fn coplanar_tri_tri(n: V3, t1: &[V3; 3], t2: &[V3; 3]) -> bool {
    let a: [[f64; 2]; 3] = core::array::from_fn(|i| project_2d(n, t1[i]));
    let b: [[f64; 2]; 3] = core::array::from_fn(|i| project_2d(n, t2[i]));
    for i in 0..3 {
        for j in 0..3 {
            if segments_intersect(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]) {
                return true;
            }
        }
    }
    point_in_tri(a[0], &b) || point_in_tri(b[0], &a)
}

// ---------------------------------------------------------------------------
// Conic distance fields.

/// Conic penalty field anchored at a triangle's circumcenter.
///
/// The cone opens along the negative face normal: a point at axial
/// penetration depth `d` behind the face and radial distance `rho`
/// from the axis scores `max(0, 1 - d/h) * max(0, 1 - rho/r)`; points
/// in front of the face score zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeField {
    /// Circumcenter of the source triangle.
    pub center: V3,
    /// Unit face normal (front direction).
    pub axis: V3,
    /// Radial support: the circumradius.
    pub radius: f64,
    /// Axial support (penetration depth of zero influence).
    pub height: f64,
}

/// Cone sizing configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeConfig {
    /// Height as a multiple of the circumradius.
    pub height_scale: f64,
}

impl Default for ConeConfig {
    fn default() -> Self {
        ConeConfig { height_scale: 1.0 }
    }
}

impl ConeField {
    /// Builds the field of a triangle; `None` for degenerate triangles.
    pub fn from_triangle(t: &[V3; 3], config: &ConeConfig) -> Option<ConeField> {
        let ab = t[1] - t[0];
        let ac = t[2] - t[0];
        let n = ab.cross(ac);
        let n2 = n.norm_sq();
        if n.norm() < DEGENERATE_AREA_EPS {
            return None;
        }
        let to_center =
            (n.cross(ab) * ac.norm_sq() + ac.cross(n) * ab.norm_sq()) * (1.0 / (2.0 * n2));
        let radius = to_center.norm();
        Some(ConeField {
            center: t[0] + to_center,
            axis: n * (1.0 / n.norm()),
            radius,
            height: radius * config.height_scale,
        })
    }
}

/// Evaluates a cone field at a point; see [`ConeField`].
pub fn cone_penalty(p: V3, cone: &ConeField) -> f64 {
    let rel = p - cone.center;
    let s = rel.dot(cone.axis);
    if s > 0.0 {
        return 0.0;
    }
    let axial = 1.0 + s / cone.height;
    if axial <= 0.0 {
        return 0.0;
    }
    let rho = (rel - cone.axis * s).norm();
    let radial = 1.0 - rho / cone.radius;
    if radial <= 0.0 {
        return 0.0;
    }
    axial * radial
}

/// Result of [`intersection_loss`].
#[derive(Debug, Clone, PartialEq)]
pub struct IsecResult {
    /// Summed cone penalties over all colliding pairs.
    pub loss: f64,
    /// Colliding `i < j` pairs, indices into the union face list
    /// (left faces first, then right offset by the left face count).
    pub pairs: Vec<(usize, usize)>,
    /// Number of degenerate triangles skipped.
    pub skipped_degenerate: usize,
}

fn union_tris(
    verts_l: &[V3],
    faces_l: &[[usize; 3]],
    verts_r: &[V3],
    faces_r: &[[usize; 3]],
) -> Vec<[V3; 3]> {
    let mut tris: Vec<[V3; 3]> = Vec::with_capacity(faces_l.len() + faces_r.len());
    for f in faces_l {
        tris.push([verts_l[f[0]], verts_l[f[1]], verts_l[f[2]]]);
    }
    for f in faces_r {
        tris.push([verts_r[f[0]], verts_r[f[1]], verts_r[f[2]]]);
    }
    tris
}

fn faces_share_vertex(a: &[usize; 3], b: &[usize; 3]) -> bool {
    a.iter().any(|i| b.contains(i))
}

/// Interpenetration penalty over the union of two hand meshes.
///
/// Finds all colliding triangle pairs (self- and inter-hand; same-hand
/// pairs sharing a vertex are excluded as mesh adjacency) and sums, for
/// each pair, the cone penalty of each triangle's field at the other
/// triangle's vertices. Zero when nothing collides.
pub fn intersection_loss(
    verts_l: &[V3],
    faces_l: &[[usize; 3]],
    verts_r: &[V3],
    faces_r: &[[usize; 3]],
    config: &ConeConfig,
) -> IsecResult {
    let tris = union_tris(verts_l, faces_l, verts_r, faces_r);
    let nl = faces_l.len();
    let bvh = match Bvh::build(&tris) {
        Ok(b) => b,
        Err(CollisionError::AllDegenerate) => {
            return IsecResult { loss: 0.0, pairs: Vec::new(), skipped_degenerate: tris.len() }
        }
    };
    let skipped = bvh.skipped_degenerate.len();
    let same_hand_adjacent = |i: usize, j: usize| -> bool {
        let both_left = i < nl && j < nl;
        let both_right = i >= nl && j >= nl;
        if both_left {
            faces_share_vertex(&faces_l[i], &faces_l[j])
        } else if both_right {
            faces_share_vertex(&faces_r[i - nl], &faces_r[j - nl])
        } else {
            false
        }
    };
    let pairs = self_colliding_pairs(&bvh, &tris, |i, j| !same_hand_adjacent(i, j));
    let config = *config;
    let mut loss = 0.0;
    for &(i, j) in &pairs {
        loss += pair_penalty(&tris[i], &tris[j], &config);
    }
    IsecResult { loss, pairs, skipped_degenerate: skipped }
}

/// Symmetric cone penalty of one triangle pair: each triangle's field
/// evaluated at the other triangle's vertices.
pub fn pair_penalty(ta: &[V3; 3], tb: &[V3; 3], config: &ConeConfig) -> f64 {
    let mut sum = 0.0;
    if let Some(cone) = ConeField::from_triangle(ta, config) {
        for v in tb {
            sum += cone_penalty(*v, &cone);
        }
    }
    if let Some(cone) = ConeField::from_triangle(tb, config) {
        for v in ta {
            sum += cone_penalty(*v, &cone);
        }
    }
    sum
}

/// Percentage of union triangles participating in at least one
/// inter-hand collision.
pub fn collision_percentage(
    verts_l: &[V3],
    faces_l: &[[usize; 3]],
    verts_r: &[V3],
    faces_r: &[[usize; 3]],
) -> f64 {
    let total = faces_l.len() + faces_r.len();
    if total == 0 {
        return 0.0;
    }
    let tris_l: Vec<[V3; 3]> =
        faces_l.iter().map(|f| [verts_l[f[0]], verts_l[f[1]], verts_l[f[2]]]).collect();
    let tris_r: Vec<[V3; 3]> =
        faces_r.iter().map(|f| [verts_r[f[0]], verts_r[f[1]], verts_r[f[2]]]).collect();
    let (Ok(bvh_l), Ok(bvh_r)) = (Bvh::build(&tris_l), Bvh::build(&tris_r)) else {
        return 0.0;
    };
    let pairs = colliding_pairs(&bvh_l, &tris_l, &bvh_r, &tris_r);
    let mut in_l = alloc::vec![false; faces_l.len()];
    let mut in_r = alloc::vec![false; faces_r.len()];
    for (i, j) in pairs {
        in_l[i] = true;
        in_r[j] = true;
    }
    let hit = in_l.iter().filter(|b| **b).count() + in_r.iter().filter(|b| **b).count();
    100.0 * hit as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rodrigues;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn tri(a: (f64, f64, f64), b: (f64, f64, f64), c: (f64, f64, f64)) -> [V3; 3] {
        [
            V3::new(a.0, a.1, a.2),
            V3::new(b.0, b.1, b.2),
            V3::new(c.0, c.1, c.2),
        ]
    }

    /// Regular tetrahedron surface, outward-wound, centered at `center`.
    fn tet(center: V3, scale: f64) -> (Vec<V3>, Vec<[usize; 3]>) {
        let verts = alloc::vec![
            center + V3::new(1.0, 1.0, 1.0) * scale,
            center + V3::new(1.0, -1.0, -1.0) * scale,
            center + V3::new(-1.0, 1.0, -1.0) * scale,
            center + V3::new(-1.0, -1.0, 1.0) * scale,
        ];
        let faces = alloc::vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        (verts, faces)
    }

    /// Signed volume of a closed mesh: positive for outward winding.
    fn signed_volume(verts: &[V3], faces: &[[usize; 3]]) -> f64 {
        faces
            .iter()
            .map(|f| verts[f[0]].dot(verts[f[1]].cross(verts[f[2]])) / 6.0)
            .sum()
    }

    #[test]
    fn tet_helper_is_outward_wound() {
        let (v, f) = tet(V3::new(0.3, -0.2, 0.1), 0.1);
        assert!(signed_volume(&v, &f) > 0.0);
    }

    #[test]
    fn aabb_overlap_is_inclusive() {
        let a = Aabb { min: V3::ZERO, max: V3::new(1.0, 1.0, 1.0) };
        let b = Aabb { min: V3::new(1.0, 0.0, 0.0), max: V3::new(2.0, 1.0, 1.0) };
        let c = Aabb { min: V3::new(1.1, 0.0, 0.0), max: V3::new(2.0, 1.0, 1.0) };
        assert!(a.overlaps(&b));
        assert!(b.overlaps(&a));
        assert!(!a.overlaps(&c));
    }

    #[test]
    fn tri_tri_piercing() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        let b = tri((0.2, 0.2, -0.5), (0.3, 0.2, 0.5), (0.2, 0.4, 0.5));
        assert!(tri_tri_intersect(&a, &b));
        assert!(tri_tri_intersect(&b, &a));
    }

    #[test]
    fn tri_tri_separated() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        let b = tri((0.0, 0.0, 0.1), (1.0, 0.0, 0.1), (0.0, 1.0, 0.1));
        assert!(!tri_tri_intersect(&a, &b));
        let c = tri((5.0, 5.0, 5.0), (6.0, 5.0, 5.0), (5.0, 6.0, 5.0));
        assert!(!tri_tri_intersect(&a, &c));
    }

    #[test]
    fn tri_tri_touching_at_vertex() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        // Shares only the origin, rising away in +z.
        let b = tri((0.0, 0.0, 0.0), (-1.0, 0.0, 1.0), (0.0, -1.0, 1.0));
        assert!(tri_tri_intersect(&a, &b));
    }

    #[test]
    fn tri_tri_touching_edge_on_face() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        // An edge lying in a's plane, crossing its interior.
        let b = tri((0.2, 0.2, 0.0), (0.4, 0.2, 0.0), (0.3, 0.2, 1.0));
        assert!(tri_tri_intersect(&a, &b));
    }

    #[test]
    fn tri_tri_coplanar() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        let overlapping = tri((0.1, 0.1, 0.0), (0.9, 0.1, 0.0), (0.1, 0.9, 0.0));
        assert!(tri_tri_intersect(&a, &overlapping));
        let contained = tri((0.1, 0.1, 0.0), (0.3, 0.1, 0.0), (0.1, 0.3, 0.0));
        assert!(tri_tri_intersect(&a, &contained));
        assert!(tri_tri_intersect(&contained, &a));
        let disjoint = tri((2.0, 2.0, 0.0), (3.0, 2.0, 0.0), (2.0, 3.0, 0.0));
        assert!(!tri_tri_intersect(&a, &disjoint));
    }

    #[test]
    fn tri_tri_identical() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0));
        assert!(tri_tri_intersect(&a, &a));
    }

    #[test]
    fn degenerate_triangles_never_intersect() {
        let a = tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0));
        let b = tri((0.0, -1.0, 0.0), (0.0, 1.0, 0.0), (0.5, 0.0, 1.0));
        assert!(!tri_tri_intersect(&a, &b));
    }

    fn random_soup(rng: &mut impl Rng, n: usize, spread: f64, size: f64) -> Vec<[V3; 3]> {
        (0..n)
            .map(|_| {
                let c = V3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                );
                core::array::from_fn(|_| {
                    c + V3::new(
                        rng.gen_range(-size..size),
                        rng.gen_range(-size..size),
                        rng.gen_range(-size..size),
                    )
                })
            })
            .collect()
    }

    #[test]
    fn bvh_pairs_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for round in 0..20 {
            let a = random_soup(&mut rng, 60, 1.0, 0.4);
            let b = random_soup(&mut rng, 60, 1.0, 0.4);
            let (bvh_a, bvh_b) = (Bvh::build(&a).unwrap(), Bvh::build(&b).unwrap());
            let fast = colliding_pairs(&bvh_a, &a, &bvh_b, &b);
            let slow = crate::reference::brute_force_pairs(&a, &b, tri_tri_intersect);
            assert_eq!(fast, slow, "round {round}");
            assert!(!fast.is_empty(), "degenerate test case in round {round}");
        }
    }

    #[test]
    fn bvh_self_pairs_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let tris = random_soup(&mut rng, 80, 1.0, 0.35);
        let bvh = Bvh::build(&tris).unwrap();
        let fast = self_colliding_pairs(&bvh, &tris, |_, _| true);
        let mut slow: Vec<(usize, usize)> = crate::reference::brute_force_pairs(
            &tris,
            &tris,
            tri_tri_intersect,
        )
        .into_iter()
        .filter(|&(i, j)| i < j)
        .collect();
        slow.sort_unstable();
        assert_eq!(fast, slow);
    }

    #[test]
    fn bvh_skips_degenerates() {
        let mut tris = alloc::vec![
            tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
            tri((0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0)),
        ];
        let bvh = Bvh::build(&tris).unwrap();
        assert_eq!(bvh.skipped_degenerate, alloc::vec![1]);
        tris.remove(0);
        assert!(matches!(Bvh::build(&tris[..1]), Err(CollisionError::AllDegenerate)));
    }

    #[test]
    fn circumcenter_of_right_triangle_is_hypotenuse_midpoint() {
        let t = tri((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 2.0, 0.0));
        let cone = ConeField::from_triangle(&t, &ConeConfig::default()).unwrap();
        assert_relative_eq!(cone.center.x, 1.0, epsilon = 1e-12);
        assert_relative_eq!(cone.center.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(cone.center.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!(cone.radius, 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(cone.axis.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cone_penalty_profile() {
        let t = tri((0.0, 0.0, 0.0), (2.0, 0.0, 0.0), (0.0, 2.0, 0.0));
        let cone = ConeField::from_triangle(&t, &ConeConfig::default()).unwrap();
        let (c, h, r) = (cone.center, cone.height, cone.radius);
        // Half-depth on the axis: axial factor 0.5, radial factor 1.
        assert_relative_eq!(cone_penalty(c - cone.axis * (h / 2.0), &cone), 0.5, epsilon = 1e-12);
        // In front of the face: zero.
        assert_eq!(cone_penalty(c + cone.axis * 0.01, &cone), 0.0);
        // Beyond the axial support: zero.
        assert_eq!(cone_penalty(c - cone.axis * (h * 1.5), &cone), 0.0);
        // Outside the radial support: zero.
        let radial_dir = V3::new(1.0, 0.0, 0.0);
        assert_eq!(cone_penalty(c - cone.axis * 0.01 + radial_dir * (r * 1.01), &cone), 0.0);
        // Just behind the face center: approaches one.
        assert!(cone_penalty(c - cone.axis * 1e-9, &cone) > 0.999);
        // Bilinear inside the support.
        let p = c - cone.axis * (h * 0.25) + radial_dir * (r * 0.5);
        assert_relative_eq!(cone_penalty(p, &cone), 0.75 * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn disjoint_hands_cost_nothing() {
        let (vl, fl) = tet(V3::new(-1.0, 0.0, 0.0), 0.1);
        let (vr, fr) = tet(V3::new(1.0, 0.0, 0.0), 0.1);
        let result = intersection_loss(&vl, &fl, &vr, &fr, &ConeConfig::default());
        assert_eq!(result.loss, 0.0);
        assert!(result.pairs.is_empty());
        assert_eq!(collision_percentage(&vl, &fl, &vr, &fr), 0.0);
    }

    #[test]
    fn overlap_costs_something() {
        let (vl, fl) = tet(V3::ZERO, 0.1);
        let (vr, fr) = tet(V3::new(0.16, 0.0, 0.0), 0.1);
        let result = intersection_loss(&vl, &fl, &vr, &fr, &ConeConfig::default());
        assert!(result.loss > 0.0);
        assert!(!result.pairs.is_empty());
        let pct = collision_percentage(&vl, &fl, &vr, &fr);
        assert!(pct > 0.0 && pct <= 100.0);
    }

    #[test]
    fn deeper_penetration_never_costs_less_while_entering() {
        // With the default cone height the fields only reward shallow
        // contact (the penalty decays past the cone support), so sweep
        // the entering range: clear gap down to first few percent of
        // overlap volume.
        let (vl, fl) = tet(V3::ZERO, 0.1);
        let mut last = 0.0;
        for step in 0..20 {
            let dx = 0.35 - 0.01 * step as f64;
            let (vr, fr) = tet(V3::new(dx, 0.0, 0.0), 0.1);
            let result = intersection_loss(&vl, &fl, &vr, &fr, &ConeConfig::default());
            assert!(
                result.loss >= last - 1e-12,
                "loss dropped from {last} to {} at dx {dx}",
                result.loss
            );
            last = result.loss;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn half_overlap_costs_more_than_shallow_overlap() {
        // Coarse four-face tetrahedra need taller cones than the
        // default before half their extent stays inside the support;
        // the height multiplier exists for exactly this.
        let config = ConeConfig { height_scale: 3.0 };
        let (vl, fl) = tet(V3::ZERO, 0.1);
        let loss_at = |dx: f64| {
            let (vr, fr) = tet(V3::new(dx, 0.0, 0.0), 0.1);
            intersection_loss(&vl, &fl, &vr, &fr, &config).loss
        };
        // Slide positions at roughly 10% and 50% overlap volume.
        let shallow = loss_at(0.105);
        let deep = loss_at(0.04);
        assert!(shallow > 0.0);
        assert!(deep > shallow);
    }

    #[test]
    fn rigid_motion_preserves_loss() {
        let (vl, fl) = tet(V3::ZERO, 0.1);
        let (vr, fr) = tet(V3::new(0.16, 0.02, -0.01), 0.1);
        let base = intersection_loss(&vl, &fl, &vr, &fr, &ConeConfig::default());
        assert!(base.loss > 0.0);
        let r = rodrigues(V3::new(0.4, -0.8, 0.3));
        let t = V3::new(2.0, -1.0, 0.5);
        let map = |vs: &[V3]| vs.iter().map(|v| r.mul_v(*v) + t).collect::<Vec<_>>();
        let moved = intersection_loss(&map(&vl), &fl, &map(&vr), &fr, &ConeConfig::default());
        assert_eq!(moved.pairs, base.pairs);
        assert_relative_eq!(moved.loss, base.loss, epsilon = 1e-9);
    }

    #[test]
    fn same_hand_adjacency_is_excluded() {
        // A single watertight tet collides with nothing by itself: all
        // its face pairs share vertices.
        let (v, f) = tet(V3::ZERO, 0.1);
        let empty: [V3; 0] = [];
        let no_faces: [[usize; 3]; 0] = [];
        let result = intersection_loss(&v, &f, &empty, &no_faces, &ConeConfig::default());
        assert_eq!(result.loss, 0.0);
        assert!(result.pairs.is_empty());
    }

    #[test]
    fn identical_meshes_fully_collide() {
        let (v, f) = tet(V3::ZERO, 0.1);
        let result = intersection_loss(&v, &f, &v, &f, &ConeConfig::default());
        assert!(!result.pairs.is_empty());
        assert_eq!(collision_percentage(&v, &f, &v, &f), 100.0);
    }
}
