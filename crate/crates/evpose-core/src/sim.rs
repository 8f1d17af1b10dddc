//! Event-camera simulation from rendered brightness frames.
//!
//! The simulator follows the standard contrast-threshold model: every
//! pixel keeps a reference log intensity, brightness between frames is
//! interpolated linearly, and each crossing of the reference by the
//! contrast threshold emits one event and moves the reference by the
//! threshold. Input frames pass through an RGGB Bayer mosaic and a log
//! map first, mirroring a real sensor front end.

use crate::event::{EventRecord, SegLabel};
use alloc::collections::BTreeMap;
use alloc::vec::Vec;
#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pinhole camera and sensor geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Sensor width in pixels.
    pub width: u16,
    /// Sensor height in pixels.
    pub height: u16,
    /// Focal length in pixels, x.
    pub fx: f64,
    /// Focal length in pixels, y.
    pub fy: f64,
    /// Principal point x.
    pub cx: f64,
    /// Principal point y.
    pub cy: f64,
}

impl CameraIntrinsics {
    /// Square-pixel intrinsics from a vertical field of view.
    pub fn from_vertical_fov(width: u16, height: u16, vfov_rad: f64) -> Self {
        let fy = (height as f64 / 2.0) / (vfov_rad / 2.0).tan();
        CameraIntrinsics {
            width,
            height,
            fx: fy,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        }
    }
}

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    /// Width in pixels.
    pub width: u16,
    /// Height in pixels.
    pub height: u16,
    /// Row-major pixel values.
    pub data: Vec<f64>,
}

impl GrayImage {
    /// Constant-valued image.
    pub fn filled(width: u16, height: u16, value: f64) -> Self {
        GrayImage { width, height, data: alloc::vec![value; width as usize * height as usize] }
    }

    /// Value at `(x, y)`.
    pub fn get(&self, x: u16, y: u16) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }
}

/// RGB image, row-major with `[r, g, b]` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    /// Width in pixels.
    pub width: u16,
    /// Height in pixels.
    pub height: u16,
    /// Row-major pixels.
    pub data: Vec<[f64; 3]>,
}

/// One rendered frame: a timestamp, per-pixel brightness and per-pixel
/// ownership used to label the events it causes.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Frame timestamp in microseconds.
    pub t_us: u64,
    /// Brightness values; linear before [`log_intensity`], log after.
    pub values: GrayImage,
    /// Per-pixel ownership (`LeftHand`, `RightHand` or `Background`).
    pub ownership: Vec<SegLabel>,
}

/// Contrast-threshold simulator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Log-intensity contrast threshold.
    pub contrast_threshold: f64,
    /// Offset added before the log map to keep it finite at zero.
    pub log_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { contrast_threshold: 0.4, log_eps: 1e-4 }
    }
}

/// Errors from the simulation front end.
#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    /// Brightness below zero cannot be log-mapped; holds pixel index and value.
    NegativeBrightness {
        /// Flat pixel index.
        index: usize,
        /// Offending value.
        value: f64,
    },
    /// Frame sequence is empty.
    NoFrames,
    /// Frame timestamps must strictly increase; holds the frame index.
    NonMonotonicFrames {
        /// Index of the offending frame.
        index: usize,
    },
    /// Frame or mask dimensions disagree.
    DimensionMismatch,
    /// Per-event label list does not match the event list.
    LabelMismatch {
        /// Number of events.
        events: usize,
        /// Number of labels.
        labels: usize,
    },
    /// A cloud point's pixel has no source events to take labels from.
    UnknownPixel {
        /// Pixel column.
        x: u16,
        /// Pixel row.
        y: u16,
    },
    /// A contrast threshold at or below zero.
    BadThreshold {
        /// Offending threshold.
        value: f64,
    },
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::NegativeBrightness { index, value } => {
                write!(f, "negative brightness {value} at pixel {index}")
            }
            SimError::NoFrames => write!(f, "frame sequence is empty"),
            SimError::NonMonotonicFrames { index } => {
                write!(f, "frame {index} does not advance time")
            }
            SimError::DimensionMismatch => write!(f, "frame/mask dimensions disagree"),
            SimError::LabelMismatch { events, labels } => {
                write!(f, "{labels} labels for {events} events")
            }
            SimError::UnknownPixel { x, y } => {
                write!(f, "cloud point at ({x}, {y}) has no source events")
            }
            SimError::BadThreshold { value } => {
                write!(f, "contrast threshold must be positive, got {value}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for SimError {}

/// Applies an RGGB Bayer mosaic: each pixel keeps the single color
/// channel its filter admits.
pub fn bayer_mosaic(rgb: &RgbImage) -> GrayImage {
    let mut data = Vec::with_capacity(rgb.data.len());
    for y in 0..rgb.height as usize {
        for x in 0..rgb.width as usize {
            let px = rgb.data[y * rgb.width as usize + x];
            let channel = match (y % 2, x % 2) {
                (0, 0) => 0,
                (1, 1) => 2,
                _ => 1,
            };
            data.push(px[channel]);
        }
    }
    GrayImage { width: rgb.width, height: rgb.height, data }
}

/// Log intensity map `L = ln(B + eps)`; rejects negative brightness.
pub fn log_intensity(img: &GrayImage, eps: f64) -> Result<GrayImage, SimError> {
    let mut data = Vec::with_capacity(img.data.len());
    for (index, &b) in img.data.iter().enumerate() {
        if b < 0.0 {
            return Err(SimError::NegativeBrightness { index, value: b });
        }
        data.push((b + eps).ln());
    }
    Ok(GrayImage { width: img.width, height: img.height, data })
}

/// Streaming contrast-threshold simulator.
///
/// Feed log-space frames one at a time with [`EventAccumulator::step`];
/// each call returns the events of the gap just closed, sorted by
/// `(t, y, x)`. Per-pixel reference levels persist across gaps, so a
/// slow drift still fires once enough contrast accumulates.
#[derive(Debug, Clone)]
pub struct EventAccumulator {
    config: SimConfig,
    l_ref: Vec<f64>,
    prev: GrayImage,
    prev_t: u64,
    last_emit: Vec<u64>,
    emitted_any: Vec<bool>,
}

impl EventAccumulator {
    /// Starts the simulator at the first log-space frame.
    pub fn new(first: &Frame, config: SimConfig) -> Result<Self, SimError> {
        if config.contrast_threshold <= 0.0 {
            return Err(SimError::BadThreshold { value: config.contrast_threshold });
        }
        let n = first.values.data.len();
        if first.ownership.len() != n {
            return Err(SimError::DimensionMismatch);
        }
        Ok(EventAccumulator {
            config,
            l_ref: first.values.data.clone(),
            prev: first.values.clone(),
            prev_t: first.t_us,
            last_emit: alloc::vec![0; n],
            emitted_any: alloc::vec![false; n],
        })
    }

    /// Advances to the next log-space frame, returning the events of
    /// the gap `(prev, frame]` with their ownership labels.
    pub fn step(&mut self, frame: &Frame) -> Result<Vec<(EventRecord, SegLabel)>, SimError> {
        if frame.values.width != self.prev.width || frame.values.height != self.prev.height {
            return Err(SimError::DimensionMismatch);
        }
        if frame.ownership.len() != frame.values.data.len() {
            return Err(SimError::DimensionMismatch);
        }
        if frame.t_us <= self.prev_t {
            return Err(SimError::NonMonotonicFrames { index: 0 });
        }
        let c = self.config.contrast_threshold;
        let t_a = self.prev_t as f64;
        let dt = (frame.t_us - self.prev_t) as f64;
        let width = self.prev.width as usize;
        let mut out: Vec<(EventRecord, SegLabel)> = Vec::new();
        for (idx, (&b, &a)) in frame.values.data.iter().zip(self.prev.data.iter()).enumerate() {
            let l_ref = &mut self.l_ref[idx];
            if (b - *l_ref).abs() < c {
                continue;
            }
            let delta = b - a;
            let (x, y) = ((idx % width) as u16, (idx / width) as u16);
            let polarity: i8 = if delta > 0.0 { 1 } else { -1 };
            let step = c * polarity as f64;
            loop {
                let next = *l_ref + step;
                let reached = if polarity > 0 { next <= b } else { next >= b };
                if !reached {
                    break;
                }
                let frac = (next - a) / delta;
                let t_exact = t_a + frac * dt;
                let mut t_us = t_exact as u64;
                if self.emitted_any[idx] && t_us <= self.last_emit[idx] {
                    t_us = self.last_emit[idx] + 1;
                }
                self.last_emit[idx] = t_us;
                self.emitted_any[idx] = true;
                out.push((EventRecord { x, y, t_us, polarity }, frame.ownership[idx]));
                *l_ref = next;
            }
        }
        out.sort_by_key(|(e, _)| (e.t_us, e.y, e.x));
        self.prev = frame.values.clone();
        self.prev_t = frame.t_us;
        Ok(out)
    }
}

/// Simulates a whole log-space frame sequence at once.
///
/// Returns the merged event stream, globally sorted by timestamp, and
/// one ownership label per event taken from the later frame of the gap
/// the event falls in.
pub fn simulate_events(
    frames: &[Frame],
    config: SimConfig,
) -> Result<(Vec<EventRecord>, Vec<SegLabel>), SimError> {
    let first = frames.first().ok_or(SimError::NoFrames)?;
    let mut acc = EventAccumulator::new(first, config)?;
    let mut events = Vec::new();
    let mut labels = Vec::new();
    for (i, frame) in frames.iter().enumerate().skip(1) {
        if frame.t_us <= frames[i - 1].t_us {
            return Err(SimError::NonMonotonicFrames { index: i });
        }
        for (e, l) in acc.step(frame)? {
            events.push(e);
            labels.push(l);
        }
    }
    Ok((events, labels))
}

/// Stream augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Maximum absolute pixel jitter applied to x and y.
    pub max_xy_jitter_px: u16,
    /// Maximum absolute timestamp jitter in microseconds.
    pub max_t_jitter_us: u64,
    /// Probability of flipping an event's polarity.
    pub polarity_swap_prob: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { max_xy_jitter_px: 1, max_t_jitter_us: 200, polarity_swap_prob: 0.02 }
    }
}

/// Randomly jitters event positions and timestamps and swaps a small
/// fraction of polarities, keeping labels attached to their events.
///
/// Positions clamp to the sensor, timestamps clamp at zero, and the
/// result is re-sorted by `(t, y, x, polarity)`; the same seed always
/// yields the same stream.
pub fn augment_events(
    events: &[EventRecord],
    labels: Option<&[SegLabel]>,
    params: &AugmentParams,
    sensor_width: u16,
    sensor_height: u16,
    seed: u64,
) -> Result<(Vec<EventRecord>, Option<Vec<SegLabel>>), SimError> {
    if let Some(l) = labels {
        if l.len() != events.len() {
            return Err(SimError::LabelMismatch { events: events.len(), labels: l.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let j = params.max_xy_jitter_px as i32;
    let jt = params.max_t_jitter_us as i64;
    let mut tagged: Vec<(EventRecord, SegLabel)> = events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let dx = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
            let dy = if j > 0 { rng.gen_range(-j..=j) } else { 0 };
            let dt = if jt > 0 { rng.gen_range(-jt..=jt) } else { 0 };
            let swap = params.polarity_swap_prob > 0.0
                && rng.gen::<f64>() < params.polarity_swap_prob;
            let e2 = EventRecord {
                x: (e.x as i32 + dx).clamp(0, sensor_width as i32 - 1) as u16,
                y: (e.y as i32 + dy).clamp(0, sensor_height as i32 - 1) as u16,
                t_us: (e.t_us as i64 + dt).max(0) as u64,
                polarity: if swap { -e.polarity } else { e.polarity },
            };
            let label = labels.map(|l| l[i]).unwrap_or(SegLabel::Background);
            (e2, label)
        })
        .collect();
    tagged.sort_by_key(|(e, _)| (e.t_us, e.y, e.x, e.polarity));
    let out_events: Vec<EventRecord> = tagged.iter().map(|(e, _)| *e).collect();
    let out_labels = labels.map(|_| tagged.iter().map(|(_, l)| *l).collect());
    Ok((out_events, out_labels))
}

/// Derives per-point segmentation labels for an aggregated cloud from
/// the labels of its source events.
///
/// A point whose source events all agree keeps that class; any
/// disagreement yields [`SegLabel::NoClass`]. `events` and `labels`
/// must be the window's raw events, aligned index for index.
pub fn label_cloud(
    cloud: &crate::event::EventCloud,
    events: &[EventRecord],
    labels: &[SegLabel],
) -> Result<Vec<SegLabel>, SimError> {
    if events.len() != labels.len() {
        return Err(SimError::LabelMismatch { events: events.len(), labels: labels.len() });
    }
    let mut per_pixel: BTreeMap<(u16, u16), Option<SegLabel>> = BTreeMap::new();
    for (e, l) in events.iter().zip(labels.iter()) {
        per_pixel
            .entry((e.y, e.x))
            .and_modify(|slot| {
                if *slot != Some(*l) {
                    *slot = None;
                }
            })
            .or_insert(Some(*l));
    }
    cloud
        .points
        .iter()
        .zip(cloud.padded.iter())
        .map(|(p, padded)| {
            if *padded {
                return Ok(SegLabel::Background);
            }
            match per_pixel.get(&(p.y, p.x)) {
                Some(Some(l)) => Ok(*l),
                Some(None) => Ok(SegLabel::NoClass),
                None => Err(SimError::UnknownPixel { x: p.x, y: p.y }),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{aggregate_window, WindowSpec};
    use alloc::vec;

    fn flat_frame(t_us: u64, w: u16, h: u16, value: f64) -> Frame {
        Frame {
            t_us,
            values: GrayImage::filled(w, h, value),
            ownership: vec![SegLabel::Background; w as usize * h as usize],
        }
    }

    fn one_px_frames(log_values: &[f64], dt: u64) -> Vec<Frame> {
        log_values
            .iter()
            .enumerate()
            .map(|(i, &v)| flat_frame(i as u64 * dt, 1, 1, v))
            .collect()
    }

    #[test]
    fn bayer_selects_rggb() {
        let rgb = RgbImage {
            width: 2,
            height: 2,
            data: vec![[1.0, 2.0, 3.0]; 4],
        };
        let gray = bayer_mosaic(&rgb);
        assert_eq!(gray.data, vec![1.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn log_intensity_rejects_negative() {
        let img = GrayImage { width: 2, height: 1, data: vec![0.5, -0.1] };
        assert!(matches!(
            log_intensity(&img, 1e-4),
            Err(SimError::NegativeBrightness { index: 1, .. })
        ));
        let ok = log_intensity(&GrayImage::filled(1, 1, 0.0), 1e-4).unwrap();
        assert!((ok.data[0] - (1e-4f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn constant_brightness_emits_nothing() {
        let frames = one_px_frames(&[0.3, 0.3, 0.3, 0.3], 1000);
        let (events, _) = simulate_events(&frames, SimConfig::default()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn unit_ramp_gives_two_even_events() {
        // One gap with a log step of 1.0 at C = 0.4: crossings at 40%
        // and 80% of the gap, both positive.
        let frames = one_px_frames(&[0.0, 1.0], 10_000);
        let (events, _) = simulate_events(&frames, SimConfig::default()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].t_us, 4000);
        assert_eq!(events[1].t_us, 8000);
        assert!(events.iter().all(|e| e.polarity == 1));
    }

    #[test]
    fn exact_threshold_fires_at_gap_end() {
        let frames = one_px_frames(&[0.0, -0.4], 10_000);
        let (events, _) = simulate_events(&frames, SimConfig::default()).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].t_us, 10_000);
        assert_eq!(events[0].polarity, -1);
    }

    #[test]
    fn count_matches_contrast_quotient() {
        // Monotone ramp from a fresh reference: floor(|dL| / C) events.
        let cases = [0.39, 0.4, 0.79, 1.0, 2.35, -0.39, -0.8, -3.99];
        for d in cases {
            let frames = one_px_frames(&[0.2, 0.2 + d], 5000);
            let (events, _) = simulate_events(&frames, SimConfig::default()).unwrap();
            let want = (d.abs() / 0.4).floor() as usize;
            assert_eq!(events.len(), want, "delta {d}");
        }
    }

    #[test]
    fn reference_persists_across_gaps() {
        // Two half-threshold steps: nothing after the first gap, one
        // event once the accumulated contrast reaches C.
        let frames = one_px_frames(&[0.0, 0.25, 0.5], 1000);
        let (events, _) = simulate_events(&frames, SimConfig::default()).unwrap();
        assert_eq!(events.len(), 1);
        assert!(events[0].t_us > 1000 && events[0].t_us <= 2000);
    }

    #[test]
    fn crossing_times_match_dense_reference() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let dt = 20_000u64;
        for _ in 0..50 {
            let vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let frames = one_px_frames(&vals, dt);
            let config = SimConfig::default();
            let (events, _) = simulate_events(&frames, config).unwrap();
            let dense = crate::reference::dense_simulate(&frames, config, 4096);
            let step_us = dt as f64 / 4096.0;
            assert_eq!(events.len(), dense.len(), "values {vals:?}");
            for (e, d) in events.iter().zip(dense.iter()) {
                assert_eq!(e.polarity, d.polarity);
                assert!(
                    (e.t_us as f64 - d.t_us).abs() <= step_us + 1.0,
                    "event at {} vs dense {} (step {step_us})",
                    e.t_us,
                    d.t_us
                );
            }
        }
    }

    #[test]
    fn per_pixel_causality_and_global_order() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (6u16, 4u16);
        let frames: Vec<Frame> = (0..8)
            .map(|i| {
                let data = (0..w as usize * h as usize)
                    .map(|_| rng.gen_range(-1.5..1.5))
                    .collect();
                Frame {
                    t_us: i * 3000,
                    values: GrayImage { width: w, height: h, data },
                    ownership: vec![SegLabel::Background; w as usize * h as usize],
                }
            })
            .collect();
        let (events, labels) = simulate_events(&frames, SimConfig::default()).unwrap();
        assert_eq!(events.len(), labels.len());
        assert!(!events.is_empty());
        assert!(events.windows(2).all(|p| p[0].t_us <= p[1].t_us));
        let mut last: BTreeMap<(u16, u16), u64> = BTreeMap::new();
        for e in &events {
            if let Some(prev) = last.get(&(e.y, e.x)) {
                assert!(e.t_us > *prev, "pixel ({}, {}) not strictly increasing", e.x, e.y);
            }
            last.insert((e.y, e.x), e.t_us);
        }
    }

    #[test]
    fn labels_follow_later_frame_ownership() {
        let mut a = flat_frame(0, 1, 1, 0.0);
        let mut b = flat_frame(1000, 1, 1, 1.0);
        a.ownership = vec![SegLabel::Background];
        b.ownership = vec![SegLabel::LeftHand];
        let (events, labels) = simulate_events(&[a, b], SimConfig::default()).unwrap();
        assert_eq!(events.len(), 2);
        assert_eq!(labels, vec![SegLabel::LeftHand; 2]);
    }

    #[test]
    fn augment_is_deterministic_and_clamped() {
        let events: Vec<EventRecord> = (0..200)
            .map(|i| EventRecord {
                x: (i % 5) as u16,
                y: (i % 3) as u16,
                t_us: 40 * i as u64,
                polarity: if i % 2 == 0 { 1 } else { -1 },
            })
            .collect();
        let labels: Vec<SegLabel> =
            (0..200).map(|i| if i % 2 == 0 { SegLabel::LeftHand } else { SegLabel::RightHand }).collect();
        let params = AugmentParams { max_xy_jitter_px: 2, max_t_jitter_us: 100, polarity_swap_prob: 0.1 };
        let (a_ev, a_lab) = augment_events(&events, Some(&labels), &params, 5, 3, 77).unwrap();
        let (b_ev, b_lab) = augment_events(&events, Some(&labels), &params, 5, 3, 77).unwrap();
        assert_eq!(a_ev, b_ev);
        assert_eq!(a_lab, b_lab);
        assert!(a_ev.iter().all(|e| e.x < 5 && e.y < 3));
        assert!(a_ev.windows(2).all(|p| p[0].t_us <= p[1].t_us));
        // Positive-labelled events started even-indexed and positive;
        // labels must have travelled with their events through the
        // sort, so polarity and label stay correlated up to swaps.
        let swapped = a_ev
            .iter()
            .zip(a_lab.as_ref().unwrap().iter())
            .filter(|(e, l)| {
                (**l == SegLabel::LeftHand) != (e.polarity == 1)
            })
            .count();
        assert!(swapped < 50, "label/polarity correlation lost: {swapped}");
        let (c_ev, _) = augment_events(&events, Some(&labels), &params, 5, 3, 78).unwrap();
        assert_ne!(a_ev, c_ev);
    }

    #[test]
    fn augment_rejects_misaligned_labels() {
        let events = vec![EventRecord { x: 0, y: 0, t_us: 0, polarity: 1 }];
        let labels = vec![SegLabel::LeftHand; 2];
        assert!(matches!(
            augment_events(&events, Some(&labels), &AugmentParams::default(), 4, 4, 0),
            Err(SimError::LabelMismatch { events: 1, labels: 2 })
        ));
    }

    #[test]
    fn label_cloud_merges_agreement_and_conflict() {
        let spec = WindowSpec { length_us: 2000, stride_us: 2000 };
        let events = vec![
            EventRecord { x: 1, y: 1, t_us: 100, polarity: 1 },
            EventRecord { x: 1, y: 1, t_us: 200, polarity: 1 },
            EventRecord { x: 2, y: 1, t_us: 150, polarity: -1 },
            EventRecord { x: 2, y: 1, t_us: 250, polarity: 1 },
        ];
        let labels = vec![
            SegLabel::LeftHand,
            SegLabel::LeftHand,
            SegLabel::RightHand,
            SegLabel::Background,
        ];
        let cloud = aggregate_window(&events, 0, spec).unwrap();
        let out = label_cloud(&cloud, &events, &labels).unwrap();
        assert_eq!(out, vec![SegLabel::LeftHand, SegLabel::NoClass]);
        assert!(matches!(
            label_cloud(&cloud, &events, &labels[..3]),
            Err(SimError::LabelMismatch { .. })
        ));
    }
}
