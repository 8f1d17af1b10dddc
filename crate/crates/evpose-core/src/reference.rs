//! Slow, independent reference implementations used as test oracles.
//!
//! Nothing here shares code with the fast paths it checks: the dense
//! simulator walks time in fixed substeps instead of solving crossings
//! analytically, the pair enumerator tests every triangle pair, and the
//! finite-difference gradient makes no use of the tape.

use crate::math::V3;
use crate::sim::{Frame, SimConfig};
use alloc::vec::Vec;

/// An event found by the dense-time reference simulator, with its
/// substep timestamp kept in `f64` microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseEvent {
    /// Pixel column.
    pub x: u16,
    /// Pixel row.
    pub y: u16,
    /// Substep time of the crossing, microseconds.
    pub t_us: f64,
    /// Polarity of the crossing.
    pub polarity: i8,
}

/// Brute-force contrast-threshold simulation over log-space frames.
///
/// Each inter-frame gap is cut into `steps_per_gap` equal substeps; at
/// every substep the linearly interpolated log intensity is compared
/// against the per-pixel reference, emitting one event (and moving the
/// reference by the threshold) as often as a full threshold of contrast
/// has accumulated. Events are reported per pixel in time order, then
/// merged sorted by `(t, y, x)`.
pub fn dense_simulate(frames: &[Frame], config: SimConfig, steps_per_gap: usize) -> Vec<DenseEvent> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let c = config.contrast_threshold;
    let width = first.values.width as usize;
    let mut l_ref = first.values.data.clone();
    let mut out: Vec<DenseEvent> = Vec::new();
    for gap in frames.windows(2) {
        let (a, b) = (&gap[0], &gap[1]);
        let t_a = a.t_us as f64;
        let dt = (b.t_us - a.t_us) as f64;
        for idx in 0..l_ref.len() {
            let (va, vb) = (a.values.data[idx], b.values.data[idx]);
            let (x, y) = ((idx % width) as u16, (idx / width) as u16);
            for s in 1..=steps_per_gap {
                let frac = s as f64 / steps_per_gap as f64;
                let l = va + (vb - va) * frac;
                while l - l_ref[idx] >= c {
                    l_ref[idx] += c;
                    out.push(DenseEvent { x, y, t_us: t_a + frac * dt, polarity: 1 });
                }
                while l_ref[idx] - l >= c {
                    l_ref[idx] -= c;
                    out.push(DenseEvent { x, y, t_us: t_a + frac * dt, polarity: -1 });
                }
            }
        }
    }
    out.sort_by(|p, q| {
        p.t_us
            .partial_cmp(&q.t_us)
            .unwrap()
            .then(p.y.cmp(&q.y))
            .then(p.x.cmp(&q.x))
    });
    out
}

/// Tests every triangle pair of two soups with the given predicate and
/// returns the intersecting index pairs, sorted.
///
/// This is the O(n^2) oracle the BVH pair query is checked against.
pub fn brute_force_pairs(
    tris_a: &[[V3; 3]],
    tris_b: &[[V3; 3]],
    intersects: impl Fn(&[V3; 3], &[V3; 3]) -> bool,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, ta) in tris_a.iter().enumerate() {
        for (j, tb) in tris_b.iter().enumerate() {
            if intersects(ta, tb) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Central finite-difference gradient of a scalar function.
///
/// Returns `df/dx[i]` for every input component, evaluated with step
/// `h` per component.
pub fn finite_difference_gradient(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Relative disagreement between an analytic and a reference gradient:
/// `|a - b| / max(1, |a|, |b|)`, maximized over components.
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference.iter())
        .map(|(&a, &b)| (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}
