//! Keyframed two-hand motion scripts and a toy software renderer.
//!
//! A [`SceneScript`] holds per-hand keyframed parameters, a camera and a
//! background description. [`render_toy_frames`] interpolates the
//! keyframes to the render rate (linear in pose, shape and translation,
//! spherical for the global rotation), poses both hand meshes and
//! rasterizes them over a slowly drifting noise background with a
//! z-buffer and flat Lambert shading. The output frames carry linear
//! brightness plus per-pixel ownership and feed the event simulator
//! after a log map.

use crate::event::SegLabel;
use crate::hand::{pose_mesh, HandAssets, HandParams};
use crate::math::{box_muller, Quat, V3};
use crate::sim::{CameraIntrinsics, Frame, GrayImage};
use alloc::string::String;
use alloc::vec::Vec;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One scripted pose at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keyframe {
    /// Keyframe timestamp in microseconds.
    pub t_us: u64,
    /// Hand parameters at that instant.
    pub params: HandParams,
}

/// Drifting value-noise background.
///
/// Brightness is `base + amplitude * v` with `v` in `[0, 1]` sampled
/// from a bilinear value-noise lattice that slides across the sensor
/// over time, so the background emits a steady trickle of events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundConfig {
    /// Darkest background brightness.
    pub base: f64,
    /// Brightness span above `base`.
    pub amplitude: f64,
    /// Noise lattice cell size in pixels.
    pub cell_px: f64,
    /// Lattice drift speed in pixels per second, x then y.
    pub drift_px_per_s: [f64; 2],
    /// Lattice hash seed.
    pub seed: u64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        BackgroundConfig {
            base: 0.35,
            amplitude: 0.22,
            cell_px: 28.0,
            drift_px_per_s: [6.0, 2.5],
            seed: 0x0bad_cafe,
        }
    }
}

/// A complete scripted take: camera, two keyframe tracks, background
/// and render settings.
///
/// A hand with an empty keyframe track is absent from the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneScript {
    /// Script name, used for dataset bookkeeping.
    pub name: String,
    /// Camera the take is rendered through.
    pub camera: CameraIntrinsics,
    /// Left-hand keyframes (empty = no left hand).
    pub left: Vec<Keyframe>,
    /// Right-hand keyframes (empty = no right hand).
    pub right: Vec<Keyframe>,
    /// Background model.
    pub background: BackgroundConfig,
    /// Take length in microseconds.
    pub duration_us: u64,
    /// Render rate in frames per second.
    pub fps_render: u32,
    /// Standard deviation of the per-vertex position noise in metres
    /// (0 disables it). Offsets are drawn once per take, not per frame,
    /// so they perturb the shape without making the surface flicker.
    pub vertex_noise_std: f64,
    /// Seed for the vertex noise.
    pub noise_seed: u64,
}

/// Script validation and rendering failures.
#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    /// A keyframe track is not strictly increasing in time.
    UnorderedKeyframes {
        /// Offending track, `"left"` or `"right"`.
        track: &'static str,
        /// Index of the first keyframe that does not advance time.
        index: usize,
    },
    /// The render rate undersamples the keyframes.
    FpsBelowSource {
        /// Configured render rate.
        fps_render: u32,
        /// Smallest keyframe gap in microseconds.
        min_key_gap_us: u64,
    },
    /// Duration or fps is zero.
    EmptyTake,
    /// A posed vertex ended up at or behind the camera plane.
    BehindCamera {
        /// Frame timestamp in microseconds.
        t_us: u64,
    },
}

impl core::fmt::Display for SceneError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SceneError::UnorderedKeyframes { track, index } => {
                write!(f, "{track} keyframe {index} does not advance time")
            }
            SceneError::FpsBelowSource { fps_render, min_key_gap_us } => write!(
                f,
                "render rate {fps_render} fps undersamples keyframes \
                 spaced {min_key_gap_us} us apart"
            ),
            SceneError::EmptyTake => write!(f, "zero duration or render rate"),
            SceneError::BehindCamera { t_us } => {
                write!(f, "posed vertex at or behind the camera plane at t={t_us} us")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SceneError {}

impl SceneScript {
    /// Checks keyframe ordering and sampling constraints.
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.duration_us == 0 || self.fps_render == 0 {
            return Err(SceneError::EmptyTake);
        }
        let mut min_gap = u64::MAX;
        for (track, keys) in [("left", &self.left), ("right", &self.right)] {
            for (i, pair) in keys.windows(2).enumerate() {
                if pair[1].t_us <= pair[0].t_us {
                    return Err(SceneError::UnorderedKeyframes { track, index: i + 1 });
                }
                min_gap = min_gap.min(pair[1].t_us - pair[0].t_us);
            }
        }
        let frame_gap = 1_000_000 / self.fps_render as u64;
        if min_gap < frame_gap {
            return Err(SceneError::FpsBelowSource {
                fps_render: self.fps_render,
                min_key_gap_us: min_gap,
            });
        }
        Ok(())
    }

    /// Render-frame timestamps, `0 ..= duration` at the render rate.
    pub fn frame_times(&self) -> Vec<u64> {
        let count = self.duration_us * self.fps_render as u64 / 1_000_000;
        (0..=count).map(|k| k * 1_000_000 / self.fps_render as u64).collect()
    }
}

/// Samples a keyframe track at one instant.
///
/// Pose, shape and translation interpolate linearly; the global
/// rotation goes through shortest-arc quaternion interpolation. Times
/// outside the track clamp to its ends. Returns `None` for an empty
/// track (absent hand).
pub fn sample_keyframes(keys: &[Keyframe], t_us: u64) -> Option<HandParams> {
    let (first, last) = (keys.first()?, keys.last()?);
    if t_us <= first.t_us {
        return Some(first.params);
    }
    if t_us >= last.t_us {
        return Some(last.params);
    }
    let hi = keys.partition_point(|k| k.t_us <= t_us);
    let (a, b) = (&keys[hi - 1], &keys[hi]);
    let u = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
    let mut p = HandParams::ZERO;
    for i in 0..p.theta.len() {
        p.theta[i] = a.params.theta[i] + (b.params.theta[i] - a.params.theta[i]) * u;
    }
    for i in 0..p.beta.len() {
        p.beta[i] = a.params.beta[i] + (b.params.beta[i] - a.params.beta[i]) * u;
    }
    p.trans = a.params.trans + (b.params.trans - a.params.trans) * u;
    let qa = Quat::from_axis_angle(a.params.rot);
    let qb = Quat::from_axis_angle(b.params.rot);
    p.rot = qa.slerp(qb, u).to_axis_angle();
    Some(p)
}

/// Densifies a keyframe track to the script's render rate.
pub fn interpolate_keyframes(script: &SceneScript, keys: &[Keyframe]) -> Vec<HandParams> {
    script.frame_times().iter().filter_map(|&t| sample_keyframes(keys, t)).collect()
}

// ---------------------------------------------------------------------------
// Background noise.

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = splitmix64(
        seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in `[0, 1]` at lattice coordinates `(gx, gy)`.
fn value_noise(seed: u64, gx: f64, gy: f64) -> f64 {
    let (fx, fy) = (gx.floor(), gy.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (ux, uy) = (fade(gx - fx), fade(gy - fy));
    let v00 = lattice(seed, ix, iy);
    let v10 = lattice(seed, ix + 1, iy);
    let v01 = lattice(seed, ix, iy + 1);
    let v11 = lattice(seed, ix + 1, iy + 1);
    let a = v00 + (v10 - v00) * ux;
    let b = v01 + (v11 - v01) * ux;
    a + (b - a) * uy
}

/// Renders the background alone at one instant.
pub fn background_frame(cfg: &BackgroundConfig, camera: &CameraIntrinsics, t_us: u64) -> GrayImage {
    let t_s = t_us as f64 * 1e-6;
    let (ox, oy) = (cfg.drift_px_per_s[0] * t_s, cfg.drift_px_per_s[1] * t_s);
    let mut img = GrayImage::filled(camera.width, camera.height, 0.0);
    for y in 0..camera.height as usize {
        let gy = (y as f64 + oy) / cfg.cell_px;
        for x in 0..camera.width as usize {
            let gx = (x as f64 + ox) / cfg.cell_px;
            img.data[y * camera.width as usize + x] =
                cfg.base + cfg.amplitude * value_noise(cfg.seed, gx, gy);
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Rasterizer.

/// Direction the light travels, into the scene.
const LIGHT_DIR: V3 = V3 { x: 0.27, y: -0.36, z: 0.89 };
/// Ambient fraction of the shade.
const AMBIENT: f64 = 0.25;
/// Left-hand albedo.
pub const ALBEDO_LEFT: f64 = 0.95;
/// Right-hand albedo; distinct from the left so the hands keep edge
/// contrast against each other when they overlap.
pub const ALBEDO_RIGHT: f64 = 0.78;

struct RasterTarget<'a> {
    brightness: &'a mut GrayImage,
    ownership: &'a mut [SegLabel],
    zbuf: &'a mut [f64],
}

/// Rasterizes one closed mesh into the target with flat Lambert shading.
fn raster_mesh(
    target: &mut RasterTarget<'_>,
    vertices: &[V3],
    faces: &[[usize; 3]],
    label: SegLabel,
    albedo: f64,
    camera: &CameraIntrinsics,
) -> Result<(), ()> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut proj = Vec::with_capacity(vertices.len());
    for v in vertices {
        if v.z <= 1e-3 {
            return Err(());
        }
        proj.push([camera.fx * v.x / v.z + camera.cx, camera.fy * v.y / v.z + camera.cy, 1.0 / v.z]);
    }
    for f in faces {
        let (a3, b3, c3) = (vertices[f[0]], vertices[f[1]], vertices[f[2]]);
        let normal = match (b3 - a3).cross(c3 - a3).normalized() {
            Some(n) => n,
            None => continue,
        };
        let lambert = (-normal.dot(LIGHT_DIR.normalized().unwrap())).max(0.0);
        let shade = albedo * (AMBIENT + (1.0 - AMBIENT) * lambert);
        let (a, b, c) = (proj[f[0]], proj[f[1]], proj[f[2]]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area == 0.0 {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let max_x = (a[0].max(b[0]).max(c[0]).ceil() as usize).min(w.saturating_sub(1));
        let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let max_y = (a[1].max(b[1]).max(c[1]).ceil() as usize).min(h.saturating_sub(1));
        for py in min_y..=max_y {
            let sy = py as f64 + 0.5;
            for px in min_x..=max_x {
                let sx = px as f64 + 0.5;
                let w0 = (c[0] - b[0]) * (sy - b[1]) - (c[1] - b[1]) * (sx - b[0]);
                let w1 = (a[0] - c[0]) * (sy - c[1]) - (a[1] - c[1]) * (sx - c[0]);
                let w2 = (b[0] - a[0]) * (sy - a[1]) - (b[1] - a[1]) * (sx - a[0]);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if !inside {
                    continue;
                }
                // Screen-space barycentrics interpolate 1/z exactly.
                let inv_z = (w0 * a[2] + w1 * b[2] + w2 * c[2]) / area;
                let z = 1.0 / inv_z;
                let idx = py * w + px;
                if z < target.zbuf[idx] {
                    target.zbuf[idx] = z;
                    target.brightness.data[idx] = shade;
                    target.ownership[idx] = label;
                }
            }
        }
    }
    Ok(())
}

/// Renders a script into linear-brightness frames with ownership masks.
///
/// Deterministic: the same script and assets always produce identical
/// frames. Vertex noise offsets are drawn once (left hand first) from
/// the script's noise seed.
pub fn render_toy_frames(
    script: &SceneScript,
    assets_left: &HandAssets,
    assets_right: &HandAssets,
) -> Result<Vec<Frame>, SceneError> {
    script.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(script.noise_seed);
    let mut draw_offsets = |n: usize| -> Vec<V3> {
        if script.vertex_noise_std == 0.0 {
            return Vec::new();
        }
        (0..n)
            .map(|_| {
                V3::new(box_muller(&mut rng), box_muller(&mut rng), box_muller(&mut rng))
                    * script.vertex_noise_std
            })
            .collect()
    };
    let offsets_left = draw_offsets(assets_left.num_vertices());
    let offsets_right = draw_offsets(assets_right.num_vertices());
    let mut frames = Vec::new();
    for t_us in script.frame_times() {
        let mut brightness = background_frame(&script.background, &script.camera, t_us);
        let n_px = brightness.data.len();
        let mut ownership = alloc::vec![SegLabel::Background; n_px];
        let mut zbuf = alloc::vec![f64::INFINITY; n_px];
        let mut target = RasterTarget {
            brightness: &mut brightness,
            ownership: &mut ownership,
            zbuf: &mut zbuf,
        };
        for (keys, assets, offsets, label, albedo) in [
            (&script.left, assets_left, &offsets_left, SegLabel::LeftHand, ALBEDO_LEFT),
            (&script.right, assets_right, &offsets_right, SegLabel::RightHand, ALBEDO_RIGHT),
        ] {
            let Some(params) = sample_keyframes(keys, t_us) else { continue };
            let mut posed = pose_mesh(&params, assets);
            for (v, o) in posed.vertices.iter_mut().zip(offsets.iter()) {
                *v = *v + *o;
            }
            raster_mesh(&mut target, &posed.vertices, &assets.faces, label, albedo, &script.camera)
                .map_err(|()| SceneError::BehindCamera { t_us })?;
        }
        frames.push(Frame { t_us, values: brightness, ownership });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Shipped scripts.

/// Desk-scale default camera: 346x240, 30 degree vertical field of view.
pub fn desk_camera() -> CameraIntrinsics {
    CameraIntrinsics::from_vertical_fov(346, 240, 30f64.to_radians())
}

const KEY_GAP_US: u64 = 50_000;
const SCRIPT_FPS: u32 = 200;
const SCRIPT_DURATION_US: u64 = 15_000_000;

/// Neutral scripted placement: wrist at `x = side * 0.055`, hand
/// centred vertically, 0.45 m from the camera. The 30-degree field of
/// view is a tight stage at this range, so scripts keep their motion
/// amplitudes small to hold every joint inside the frame.
fn base_placement(side: f64) -> HandParams {
    let mut p = HandParams::ZERO;
    p.trans = V3::new(side * 0.055, -0.085, 0.45);
    p
}

/// Fixed small shape vector for one scripted hand.
fn script_beta(seed: u64) -> [f64; crate::hand::SHAPE_COMPS] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut beta = [0.0; crate::hand::SHAPE_COMPS];
    for b in &mut beta {
        *b = 0.05 * box_muller(&mut rng).clamp(-2.0, 2.0);
    }
    beta
}

fn keyed_track(
    duration_us: u64,
    mut params_at: impl FnMut(f64) -> HandParams,
) -> Vec<Keyframe> {
    (0..=duration_us / KEY_GAP_US)
        .map(|k| {
            let t_us = k * KEY_GAP_US;
            Keyframe { t_us, params: params_at(t_us as f64 * 1e-6) }
        })
        .collect()
}

fn script_shell(name: &str, left: Vec<Keyframe>, right: Vec<Keyframe>, noise_seed: u64) -> SceneScript {
    SceneScript {
        name: String::from(name),
        camera: desk_camera(),
        left,
        right,
        background: BackgroundConfig::default(),
        duration_us: SCRIPT_DURATION_US,
        fps_render: SCRIPT_FPS,
        vertex_noise_std: 0.003,
        noise_seed,
    }
}

/// Two hands waving in mirror symmetry around their rest placements.
pub fn script_mirrored_waves() -> SceneScript {
    use core::f64::consts::TAU;
    let wave = |side: f64, beta_seed: u64| {
        let beta = script_beta(beta_seed);
        keyed_track(SCRIPT_DURATION_US, move |t| {
            let phase = TAU * 0.8 * t;
            let mut p = base_placement(side);
            p.beta = beta;
            p.rot = V3::new(
                0.08 * (0.50 * phase).sin(),
                side * 0.06 * (0.23 * phase).sin(),
                side * 0.15 * phase.sin(),
            );
            p.trans.x = side * (0.040 + 0.006 * (0.37 * phase).sin());
            p.trans.y += 0.008 * (0.61 * phase).sin();
            p.trans.z += 0.012 * (0.43 * phase).sin();
            p.theta[0] = 0.25 * (0.53 * phase).sin();
            p.theta[1] = 0.20 * (0.31 * phase + 1.0).sin();
            p
        })
    };
    script_shell("mirrored_waves", wave(-1.0, 101), wave(1.0, 102), 201)
}

/// Hands turn palms inward and meet three times; the closest approach
/// brings the wrists inside the collision-gating distance.
pub fn script_clap() -> SceneScript {
    use core::f64::consts::TAU;
    let clap = |side: f64, beta_seed: u64| {
        let beta = script_beta(beta_seed);
        keyed_track(SCRIPT_DURATION_US, move |t| {
            let approach = 0.5 * (1.0 - (TAU * 0.2 * t + core::f64::consts::PI).cos());
            let mut p = base_placement(side);
            p.beta = beta;
            p.trans.x = side * (0.024 + 0.111 * approach);
            p.trans.y += 0.010 * (TAU * 0.3 * t).sin();
            p.rot = V3::new(0.0, -side * (1.1 - 0.1 * (TAU * 0.13 * t).sin()), 0.0);
            p.theta[0] = 0.15 * (TAU * 0.27 * t).sin();
            p
        })
    };
    script_shell("clap", clap(-1.0, 111), clap(1.0, 112), 202)
}

/// The left hand sweeps across the right at a nearer depth, occluding
/// it twice per cycle.
pub fn script_crossover() -> SceneScript {
    use core::f64::consts::TAU;
    let sweep = |side: f64, z: f64, beta_seed: u64| {
        let beta = script_beta(beta_seed);
        keyed_track(SCRIPT_DURATION_US, move |t| {
            let mut p = base_placement(side);
            p.beta = beta;
            p.trans.x = side * 0.045 * (TAU * t / 7.5).cos();
            p.trans.y += 0.012 * (TAU * t / 6.3 + side).sin();
            p.trans.z = z;
            p.rot = V3::new(0.0, side * 0.22 * (TAU * t / 5.0).sin(), 0.0);
            p.theta[1] = 0.18 * (TAU * t / 4.1).sin();
            p
        })
    };
    script_shell("crossover", sweep(-1.0, 0.42, 121), sweep(1.0, 0.49, 122), 203)
}

/// The three shipped scripts.
pub fn shipped_scripts() -> Vec<SceneScript> {
    alloc::vec![script_mirrored_waves(), script_clap(), script_crossover()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::{generate_toy_assets, project, regress_joints, Handedness};
    use approx::assert_relative_eq;

    fn key(t_us: u64, params: HandParams) -> Keyframe {
        Keyframe { t_us, params }
    }

    fn trans_key(t_us: u64, x: f64, y: f64, z: f64) -> Keyframe {
        let mut p = HandParams::ZERO;
        p.trans = V3::new(x, y, z);
        key(t_us, p)
    }

    #[test]
    fn identical_keyframes_interpolate_to_a_constant() {
        let mut p = HandParams::ZERO;
        p.theta[2] = 0.3;
        p.rot = V3::new(0.1, -0.2, 0.4);
        p.trans = V3::new(0.05, -0.02, 0.45);
        let keys = [key(0, p), key(1_000_000, p)];
        for t in [0, 1, 250_000, 999_999, 1_000_000] {
            let s = sample_keyframes(&keys, t).unwrap();
            assert_relative_eq!(s.theta[2], 0.3, epsilon = 1e-12);
            assert_relative_eq!(s.rot.z, 0.4, epsilon = 1e-9);
            assert_relative_eq!(s.trans.x, 0.05, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_interpolates_linearly_on_the_frame_grid() {
        let script = SceneScript {
            name: String::from("t"),
            camera: desk_camera(),
            left: Vec::new(),
            right: alloc::vec![
                trans_key(0, 0.0, 0.0, 0.4),
                trans_key(1_000_000, 1.0, 0.0, 0.4),
            ],
            background: BackgroundConfig::default(),
            duration_us: 1_000_000,
            fps_render: 10,
            vertex_noise_std: 0.0,
            noise_seed: 0,
        };
        let dense = interpolate_keyframes(&script, &script.right);
        assert_eq!(dense.len(), 11);
        for (k, p) in dense.iter().enumerate() {
            assert_relative_eq!(p.trans.x, k as f64 / 10.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_midpoint_halves_the_angle() {
        let mut b = HandParams::ZERO;
        b.rot = V3::new(0.0, 0.0, core::f64::consts::FRAC_PI_2);
        let keys = [key(0, HandParams::ZERO), key(100, b)];
        let mid = sample_keyframes(&keys, 50).unwrap();
        assert_relative_eq!(mid.rot.z, core::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(mid.rot.x, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sampling_clamps_to_track_ends() {
        let keys = [trans_key(100, 1.0, 0.0, 0.4), trans_key(200, 2.0, 0.0, 0.4)];
        assert_relative_eq!(sample_keyframes(&keys, 0).unwrap().trans.x, 1.0);
        assert_relative_eq!(sample_keyframes(&keys, 5_000).unwrap().trans.x, 2.0);
        assert!(sample_keyframes(&[], 0).is_none());
    }

    #[test]
    fn validation_rejects_bad_scripts() {
        let mut s = script_clap();
        s.validate().unwrap();
        s.left[3].t_us = s.left[2].t_us;
        assert_eq!(
            s.validate(),
            Err(SceneError::UnorderedKeyframes { track: "left", index: 3 })
        );
        let mut s = script_clap();
        s.fps_render = 10;
        assert!(matches!(s.validate(), Err(SceneError::FpsBelowSource { .. })));
        let mut s = script_clap();
        s.duration_us = 0;
        assert_eq!(s.validate(), Err(SceneError::EmptyTake));
    }

    #[test]
    fn empty_scene_renders_background_only() {
        let mut s = script_shell("empty", Vec::new(), Vec::new(), 5);
        s.duration_us = 20_000;
        let frames = render_toy_frames(
            &s,
            &generate_toy_assets(1, Handedness::Left),
            &generate_toy_assets(1, Handedness::Right),
        )
        .unwrap();
        assert_eq!(frames.len(), 5);
        let bg = &s.background;
        for f in &frames {
            assert!(f.ownership.iter().all(|&l| l == SegLabel::Background));
            for &v in &f.values.data {
                assert!(v >= bg.base && v <= bg.base + bg.amplitude);
            }
        }
    }

    #[test]
    fn background_drifts_but_stays_in_range() {
        let cfg = BackgroundConfig::default();
        let cam = desk_camera();
        let a = background_frame(&cfg, &cam, 0);
        let b = background_frame(&cfg, &cam, 1_000_000);
        assert_ne!(a.data, b.data);
        // One second of drift moves the lattice 6 px = 6/28 cell, so the
        // field decorrelates only slightly.
        let max_step = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_step < cfg.amplitude, "drift jumped by {max_step}");
    }

    #[test]
    fn nearer_hand_wins_the_depth_test() {
        // Both hands dead centre, right one closer to the camera.
        let mut left = HandParams::ZERO;
        left.trans = V3::new(0.0, -0.09, 0.50);
        let mut right = HandParams::ZERO;
        right.trans = V3::new(0.0, -0.09, 0.40);
        let mut s = script_shell(
            "depth",
            alloc::vec![key(0, left), key(100_000, left)],
            alloc::vec![key(0, right), key(100_000, right)],
            7,
        );
        s.duration_us = 100;
        s.vertex_noise_std = 0.0;
        let frames = render_toy_frames(
            &s,
            &generate_toy_assets(1, Handedness::Left),
            &generate_toy_assets(1, Handedness::Right),
        )
        .unwrap();
        let own = &frames[0].ownership;
        let cam = s.camera;
        // Probe the palm interior (template palm centre plus the shared
        // translation), where both hands overlap.
        let u = cam.cx as usize;
        let v = (cam.fy * (-0.045) / 0.40 + cam.cy) as usize;
        let probe = own[v * cam.width as usize + u];
        assert_eq!(probe, SegLabel::RightHand);
        assert!(own.iter().any(|&l| l == SegLabel::LeftHand), "far hand fully hidden");
    }

    #[test]
    fn frame_differences_stay_inside_the_moving_silhouettes() {
        let mut s = script_shell(
            "move",
            Vec::new(),
            alloc::vec![
                trans_key(0, -0.02, -0.09, 0.45),
                trans_key(100_000, 0.02, -0.09, 0.45),
            ],
            9,
        );
        s.duration_us = 100_000;
        s.fps_render = 20;
        s.background.drift_px_per_s = [0.0, 0.0];
        let frames = render_toy_frames(
            &s,
            &generate_toy_assets(1, Handedness::Left),
            &generate_toy_assets(1, Handedness::Right),
        )
        .unwrap();
        assert_eq!(frames.len(), 3);
        let (a, b) = (&frames[0], &frames[1]);
        let mut moved = 0;
        for i in 0..a.values.data.len() {
            if (a.values.data[i] - b.values.data[i]).abs() > 1e-12 {
                moved += 1;
                assert!(
                    a.ownership[i] != SegLabel::Background
                        || b.ownership[i] != SegLabel::Background,
                    "background pixel {i} changed under a frozen background"
                );
            }
        }
        assert!(moved > 50, "hand motion left no trace ({moved} pixels)");
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut s = script_crossover();
        s.duration_us = 40_000;
        let al = generate_toy_assets(1, Handedness::Left);
        let ar = generate_toy_assets(1, Handedness::Right);
        let a = render_toy_frames(&s, &al, &ar).unwrap();
        let b = render_toy_frames(&s, &al, &ar).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shipped_scripts_validate_and_keep_joints_in_frame() {
        let al = generate_toy_assets(1, Handedness::Left);
        let ar = generate_toy_assets(1, Handedness::Right);
        for script in shipped_scripts() {
            script.validate().unwrap();
            assert!(!script.left.is_empty() && !script.right.is_empty());
            let cam = script.camera;
            for t in (0..=script.duration_us).step_by(250_000) {
                for (keys, assets) in [(&script.left, &al), (&script.right, &ar)] {
                    let p = sample_keyframes(keys, t).unwrap();
                    let posed = pose_mesh(&p, assets);
                    let joints = regress_joints(&posed.vertices, assets);
                    let px = project(&joints, &cam).unwrap();
                    for (j, q) in px.iter().enumerate() {
                        assert!(
                            q[0] >= 0.0
                                && q[0] < cam.width as f64
                                && q[1] >= 0.0
                                && q[1] < cam.height as f64,
                            "{}: joint {j} at {q:?} off-frame at t={t}",
                            script.name
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn clap_reaches_the_collision_gate() {
        let s = script_clap();
        let mut min_gap = f64::MAX;
        for t in (0..=s.duration_us).step_by(10_000) {
            let l = sample_keyframes(&s.left, t).unwrap();
            let r = sample_keyframes(&s.right, t).unwrap();
            min_gap = min_gap.min((l.trans - r.trans).norm());
        }
        assert!(
            min_gap < crate::metrics::COLL_GATE_M,
            "closest wrist approach {min_gap} never gates collision measurement"
        );
    }

    #[test]
    fn crossover_occludes_the_far_hand() {
        let mut s = script_crossover();
        // Quarter period: both sweeps hit x = 0 and overlap in depth order.
        let t = 1_875_000;
        s.duration_us = t;
        let al = generate_toy_assets(1, Handedness::Left);
        let ar = generate_toy_assets(1, Handedness::Right);
        let both = render_toy_frames(&s, &al, &ar).unwrap().pop().unwrap();
        let mut right_only = s.clone();
        right_only.left.clear();
        let solo = render_toy_frames(&right_only, &al, &ar).unwrap().pop().unwrap();
        let mut occluded = 0;
        for i in 0..both.ownership.len() {
            if solo.ownership[i] == SegLabel::RightHand
                && both.ownership[i] == SegLabel::LeftHand
            {
                occluded += 1;
            }
        }
        assert!(occluded > 100, "left hand occludes only {occluded} right-hand pixels");
    }
}
