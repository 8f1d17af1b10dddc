//! Dataset directories.
//!
//! `gen-data` lays a dataset out as:
//!
//! * `manifest.json` — sensor geometry, windowing, seeds, per-script
//!   entries and one row per window (owning script, window-end time,
//!   split assignment, real-point count).
//! * `windows/w<index>.evcl` — one resampled, labeled event cloud per
//!   window, numbered globally in generation order.
//! * `targets.bin` — a named-array container holding one row per
//!   window: both hands' flattened parameters at the window's end
//!   time, which is the supervision target for that window.
//!
//! Ground-truth joints are not stored; they are reposed at load time
//! from the parameters and the asset seed recorded in the manifest,
//! which keeps the files small and cannot drift out of sync with the
//! parameters.
//!
//! Windows are split into train and test blocks *within* each take:
//! consecutive runs of `block_windows` windows form blocks, and every
//! `holdout_every`-th block is held out. Test windows therefore come
//! from the same scripts as the training data but from disjoint time
//! spans, which is the evaluation regime the training harness targets.

use crate::config::RunConfig;
use crate::container::{read_cloud, write_cloud, ArraysFile};
use crate::exit::validation_err;
use evpose_core::event::{aggregate_window, resample_cloud, slice_stream, EventCloud, EventRecord};
use evpose_core::hand::{
    generate_toy_assets, pose_mesh, HandAssets, HandParams, Handedness, PARAM_DIMS,
};
use evpose_core::loss::TwoHandTarget;
use evpose_core::math::V3;
use evpose_core::net::{NamedArray, TrainSample};
use evpose_core::scene::{render_toy_frames, sample_keyframes, SceneScript};
use evpose_core::sim::{label_cloud, log_intensity, simulate_events, CameraIntrinsics, Frame};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Manifest format tag; bumped on incompatible layout changes.
pub const FORMAT_TAG: &str = "evpose-dataset-1";

/// Split assignment of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    /// Used by the training loop.
    Train,
    /// Held out for evaluation.
    Test,
}

/// Camera geometry as recorded in the manifest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorInfo {
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

impl SensorInfo {
    fn from_intrinsics(c: &CameraIntrinsics) -> SensorInfo {
        SensorInfo { width: c.width, height: c.height, fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy }
    }

    /// Core intrinsics.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
        }
    }
}

/// One rendered take inside the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Script name.
    pub name: String,
    /// Rendered take length in microseconds.
    pub duration_us: u64,
    /// Render rate the events were simulated from.
    pub fps_render: u32,
    /// Global index of the take's first window.
    pub first_window: usize,
    /// Number of windows the take contributed.
    pub windows: usize,
    /// Raw events the take's stream contained.
    pub events: usize,
}

/// One dataset window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    /// Index into [`DatasetManifest::scripts`].
    pub script: usize,
    /// Window end time in script microseconds; the supervision
    /// parameters are sampled here.
    pub end_us: u64,
    /// Split assignment.
    pub split: Split,
    /// Non-padding rows in the stored cloud.
    pub real_points: usize,
}

/// The dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Layout tag, [`FORMAT_TAG`].
    pub format: String,
    /// Camera the takes were rendered through.
    pub sensor: SensorInfo,
    /// Window length in microseconds.
    pub window_length_us: u64,
    /// Window stride in microseconds.
    pub window_stride_us: u64,
    /// Stored cloud size M.
    pub resample_points: usize,
    /// Event-simulator contrast threshold.
    pub contrast_threshold: f64,
    /// Event-simulator brightness floor.
    pub log_eps: f64,
    /// Seed the hand assets are regenerated from.
    pub asset_seed: u64,
    /// Seed of the per-window resampling streams.
    pub data_seed: u64,
    /// Windows dropped because they contained no events.
    pub skipped_empty: usize,
    /// Rendered takes.
    pub scripts: Vec<ScriptEntry>,
    /// One entry per stored window.
    pub windows: Vec<WindowEntry>,
}

/// Number of complete windows a take of `duration_us` yields.
pub fn expected_window_count(duration_us: u64, length_us: u64, stride_us: u64) -> usize {
    if duration_us < length_us {
        0
    } else {
        ((duration_us - length_us) / stride_us + 1) as usize
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-window resampling seed: a fixed mix of the data seed and the
/// global window index, so windows are independent of generation order
/// and of each other.
pub fn window_seed(data_seed: u64, window_index: u64) -> u64 {
    splitmix64(data_seed ^ window_index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Filename of window `index` relative to the dataset root.
pub fn window_file(index: usize) -> String {
    format!("windows/w{index:06}.evcl")
}

fn subslice_offset(base: &[EventRecord], sub: &[EventRecord]) -> usize {
    (sub.as_ptr() as usize - base.as_ptr() as usize) / core::mem::size_of::<EventRecord>()
}

/// Renders every configured script, simulates its event stream and
/// writes the complete dataset under `out`.
///
/// `out` may exist only if it is empty, unless `force` is set; with
/// `force`, any previous `manifest.json`, `targets.bin` and `windows/`
/// content is replaced.
pub fn build_dataset(config: &RunConfig, out: &Path, force: bool) -> anyhow::Result<DatasetManifest> {
    if out.exists() && !force {
        let mut entries = std::fs::read_dir(out)
            .map_err(|e| anyhow::anyhow!("reading output directory {}: {e}", out.display()))?;
        if entries.next().is_some() {
            return Err(validation_err(format!(
                "output directory {} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
    }
    let scripts = config.scene_scripts()?;
    for script in &scripts {
        if script.left.is_empty() || script.right.is_empty() {
            return Err(validation_err(format!(
                "script {:?} does not pose both hands; datasets need two-hand takes",
                script.name
            )));
        }
    }
    let windows_dir = out.join("windows");
    std::fs::create_dir_all(&windows_dir)
        .map_err(|e| anyhow::anyhow!("creating {}: {e}", windows_dir.display()))?;

    let assets_left = generate_toy_assets(config.seeds.assets, Handedness::Left);
    let assets_right = generate_toy_assets(config.seeds.assets, Handedness::Right);
    let spec = config.windows.spec();
    let sim = config.sim.to_core();
    let m = config.windows.resample_points;

    let mut manifest = DatasetManifest {
        format: String::from(FORMAT_TAG),
        sensor: SensorInfo::from_intrinsics(&config.sensor.intrinsics()),
        window_length_us: spec.length_us,
        window_stride_us: spec.stride_us,
        resample_points: m,
        contrast_threshold: sim.contrast_threshold,
        log_eps: sim.log_eps,
        asset_seed: config.seeds.assets,
        data_seed: config.seeds.data,
        skipped_empty: 0,
        scripts: Vec::with_capacity(scripts.len()),
        windows: Vec::new(),
    };
    let mut target_rows: Vec<f32> = Vec::new();

    for (script_index, script) in scripts.iter().enumerate() {
        let rendered = render_toy_frames(script, &assets_left, &assets_right)
            .map_err(|e| validation_err(format!("rendering script {:?}: {e}", script.name)))?;
        let log_frames: Vec<Frame> = rendered
            .into_iter()
            .map(|f| {
                Ok(Frame {
                    t_us: f.t_us,
                    values: log_intensity(&f.values, sim.log_eps)?,
                    ownership: f.ownership,
                })
            })
            .collect::<Result<Vec<Frame>, evpose_core::sim::SimError>>()
            .map_err(|e| validation_err(format!("log mapping script {:?}: {e}", script.name)))?;
        let (events, event_labels) = simulate_events(&log_frames, sim)
            .map_err(|e| validation_err(format!("simulating script {:?}: {e}", script.name)))?;
        drop(log_frames);

        let first_window = manifest.windows.len();
        let mut script_windows = 0usize;
        let iter = slice_stream(&events, spec, 0, script.duration_us, true)
            .map_err(|e| validation_err(format!("windowing script {:?}: {e}", script.name)))?;
        for window in iter {
            if window.events.is_empty() {
                manifest.skipped_empty += 1;
                continue;
            }
            let lo = subslice_offset(&events, window.events);
            let labels = &event_labels[lo..lo + window.events.len()];
            let run = || -> Result<(EventCloud, usize), evpose_core::event::StreamError> {
                let mut cloud = aggregate_window(window.events, window.start_us, spec)?;
                cloud.labels = Some(
                    label_cloud(&cloud, window.events, labels).expect("aligned window labels"),
                );
                let global = manifest.windows.len() as u64;
                let resampled =
                    resample_cloud(&cloud, m, window_seed(config.seeds.data, global))?;
                let real = resampled.padded.iter().filter(|p| !**p).count();
                Ok((resampled, real))
            };
            let (cloud, real_points) = run()
                .map_err(|e| validation_err(format!("aggregating script {:?}: {e}", script.name)))?;

            let global = manifest.windows.len();
            write_cloud(
                &out.join(window_file(global)),
                manifest.sensor.width,
                manifest.sensor.height,
                &cloud,
            )?;

            let end_us = window.start_us + spec.length_us;
            let left = sample_keyframes(&script.left, end_us).expect("two-hand take");
            let right = sample_keyframes(&script.right, end_us).expect("two-hand take");
            target_rows.extend(left.to_flat().iter().map(|v| *v as f32));
            target_rows.extend(right.to_flat().iter().map(|v| *v as f32));

            let block = script_windows / config.data.block_windows;
            let split = if block % config.data.holdout_every == config.data.holdout_every - 1 {
                Split::Test
            } else {
                Split::Train
            };
            manifest.windows.push(WindowEntry { script: script_index, end_us, split, real_points });
            script_windows += 1;
        }
        manifest.scripts.push(ScriptEntry {
            name: script.name.clone(),
            duration_us: script.duration_us,
            fps_render: script.fps_render,
            first_window,
            windows: script_windows,
            events: events.len(),
        });
    }

    let targets = ArraysFile {
        meta: vec![(String::from("kind"), String::from("targets"))],
        arrays: vec![NamedArray {
            name: String::from("params"),
            rows: manifest.windows.len(),
            cols: 2 * PARAM_DIMS,
            data: target_rows,
        }],
    };
    crate::container::write_arrays(&out.join("targets.bin"), &targets)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(out.join("manifest.json"), json)
        .map_err(|e| anyhow::anyhow!("writing manifest: {e}"))?;
    Ok(manifest)
}

/// One window loaded into memory.
#[derive(Debug, Clone)]
pub struct LoadedWindow {
    /// Index into the manifest's scripts.
    pub script: usize,
    /// Window end time in script microseconds.
    pub end_us: u64,
    /// Split assignment.
    pub split: Split,
    /// The stored cloud, labels and padding included.
    pub cloud: EventCloud,
    /// Left-hand supervision parameters.
    pub left: HandParams,
    /// Right-hand supervision parameters.
    pub right: HandParams,
    /// Left-hand joints posed from `left`.
    pub joints_left: Vec<V3>,
    /// Right-hand joints posed from `right`.
    pub joints_right: Vec<V3>,
}

/// A dataset resident in memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    /// The manifest as read.
    pub manifest: DatasetManifest,
    /// Left-hand assets, regenerated from the manifest seed.
    pub assets_left: HandAssets,
    /// Right-hand assets, regenerated from the manifest seed.
    pub assets_right: HandAssets,
    /// All windows, in manifest order.
    pub windows: Vec<LoadedWindow>,
}

impl LoadedDataset {
    /// Camera the dataset was rendered through.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.manifest.sensor.intrinsics()
    }

    /// Indices of the windows in `split`, or all windows when `None`.
    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        self.windows
            .iter()
            .enumerate()
            .filter(|(_, w)| split.map_or(true, |s| w.split == s))
            .map(|(i, _)| i)
            .collect()
    }

    /// Builds the training sample for window `index`.
    pub fn sample(&self, index: usize) -> TrainSample {
        let w = &self.windows[index];
        let features = evpose_core::event::normalize_cloud(
            &w.cloud,
            self.manifest.sensor.width,
            self.manifest.sensor.height,
        );
        TrainSample {
            features,
            target: TwoHandTarget {
                left: w.left,
                right: w.right,
                joints_left: w.joints_left.clone(),
                joints_right: w.joints_right.clone(),
                labels: w.cloud.labels.clone().expect("dataset clouds are labeled"),
                padded: w.cloud.padded.clone(),
            },
        }
    }
}

fn manifest_path(root: &Path) -> PathBuf {
    root.join("manifest.json")
}

/// Reads `manifest.json` alone.
pub fn load_manifest(root: &Path) -> anyhow::Result<DatasetManifest> {
    let path = manifest_path(root);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| validation_err(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT_TAG {
        return Err(validation_err(format!(
            "{}: format {:?}, this build reads {FORMAT_TAG:?}",
            path.display(),
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Loads a complete dataset into memory, reposing ground-truth joints
/// from the stored parameters.
pub fn load_dataset(root: &Path) -> anyhow::Result<LoadedDataset> {
    let manifest = load_manifest(root)?;
    let targets = crate::container::read_arrays(&root.join("targets.bin"))?;
    let params = targets
        .arrays
        .iter()
        .find(|a| a.name == "params")
        .ok_or_else(|| validation_err("targets.bin lacks the params array"))?;
    if params.rows != manifest.windows.len() || params.cols != 2 * PARAM_DIMS {
        return Err(validation_err(format!(
            "targets.bin holds {}x{} parameters for {} windows",
            params.rows,
            params.cols,
            manifest.windows.len()
        )));
    }
    let assets_left = generate_toy_assets(manifest.asset_seed, Handedness::Left);
    let assets_right = generate_toy_assets(manifest.asset_seed, Handedness::Right);

    let mut windows = Vec::with_capacity(manifest.windows.len());
    for (i, entry) in manifest.windows.iter().enumerate() {
        let path = root.join(window_file(i));
        let (w, h, cloud) = read_cloud(&path)?;
        if (w, h) != (manifest.sensor.width, manifest.sensor.height) {
            return Err(validation_err(format!(
                "{}: sensor {w}x{h} does not match the manifest",
                path.display()
            )));
        }
        if cloud.points.len() != manifest.resample_points {
            return Err(validation_err(format!(
                "{}: {} rows, manifest says {}",
                path.display(),
                cloud.points.len(),
                manifest.resample_points
            )));
        }
        if cloud.labels.is_none() {
            return Err(validation_err(format!("{}: dataset cloud lacks labels", path.display())));
        }
        let row = &params.data[i * 2 * PARAM_DIMS..(i + 1) * 2 * PARAM_DIMS];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(validation_err(format!("targets.bin row {i} holds non-finite parameters")));
        }
        let mut flat = [0.0f64; PARAM_DIMS];
        for (slot, v) in flat.iter_mut().zip(&row[..PARAM_DIMS]) {
            *slot = f64::from(*v);
        }
        let left = HandParams::from_flat(&flat);
        for (slot, v) in flat.iter_mut().zip(&row[PARAM_DIMS..]) {
            *slot = f64::from(*v);
        }
        let right = HandParams::from_flat(&flat);
        let joints_left = pose_mesh(&left, &assets_left).joints.to_vec();
        let joints_right = pose_mesh(&right, &assets_right).joints.to_vec();
        windows.push(LoadedWindow {
            script: entry.script,
            end_us: entry.end_us,
            split: entry.split,
            cloud,
            left,
            right,
            joints_left,
            joints_right,
        });
    }
    Ok(LoadedDataset { manifest, assets_left, assets_right, windows })
}

/// Renders one script and simulates its stream; the backbone of
/// `simulate` and `bench`.
///
/// Returns the linear-brightness frames and the simulated events with
/// their per-event labels.
pub fn simulate_script(
    script: &SceneScript,
    config: &RunConfig,
) -> anyhow::Result<(Vec<Frame>, Vec<EventRecord>, Vec<evpose_core::event::SegLabel>)> {
    let assets_left = generate_toy_assets(config.seeds.assets, Handedness::Left);
    let assets_right = generate_toy_assets(config.seeds.assets, Handedness::Right);
    let rendered = render_toy_frames(script, &assets_left, &assets_right)
        .map_err(|e| validation_err(format!("rendering script {:?}: {e}", script.name)))?;
    let sim = config.sim.to_core();
    let log_frames: Vec<Frame> = rendered
        .iter()
        .map(|f| {
            Ok(Frame {
                t_us: f.t_us,
                values: log_intensity(&f.values, sim.log_eps)?,
                ownership: f.ownership.clone(),
            })
        })
        .collect::<Result<Vec<Frame>, evpose_core::sim::SimError>>()
        .map_err(|e| validation_err(format!("log mapping script {:?}: {e}", script.name)))?;
    let (events, labels) = simulate_events(&log_frames, sim)
        .map_err(|e| validation_err(format!("simulating script {:?}: {e}", script.name)))?;
    Ok((rendered, events, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.data.scripts = vec![String::from("mirrored_waves")];
        config.data.take_us = Some(300_000);
        config.data.block_windows = 40;
        config.data.holdout_every = 3;
        config.windows.resample_points = 64;
        config
    }

    #[test]
    fn window_seeds_differ_and_repeat() {
        assert_eq!(window_seed(5, 17), window_seed(5, 17));
        assert_ne!(window_seed(5, 17), window_seed(5, 18));
        assert_ne!(window_seed(5, 17), window_seed(6, 17));
    }

    #[test]
    fn expected_window_count_matches_the_formula() {
        assert_eq!(expected_window_count(1_000_000, 2000, 1000), 999);
        assert_eq!(expected_window_count(2000, 2000, 1000), 1);
        assert_eq!(expected_window_count(1999, 2000, 1000), 0);
    }

    #[test]
    fn build_load_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let manifest = build_dataset(&config, dir.path(), false).unwrap();

        let want =
            expected_window_count(300_000, config.windows.length_us, config.windows.stride_us);
        assert_eq!(manifest.windows.len() + manifest.skipped_empty, want);
        assert!(manifest.windows.len() > want / 2, "most windows should hold events");

        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.manifest, manifest);
        assert_eq!(loaded.windows.len(), manifest.windows.len());
        for w in &loaded.windows {
            assert_eq!(w.cloud.points.len(), 64);
            assert_eq!(w.joints_left.len(), evpose_core::hand::NUM_JOINTS);
            assert!(w.cloud.labels.is_some());
        }
        // Window-end parameters must match the script sampled directly.
        let script = &config.scene_scripts().unwrap()[0];
        let w = &loaded.windows[10];
        let gt = sample_keyframes(&script.left, w.end_us).unwrap();
        for (a, b) in w.left.to_flat().iter().zip(gt.to_flat()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn splits_are_blockwise_and_both_present() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        let manifest = build_dataset(&config, dir.path(), false).unwrap();
        let splits: Vec<Split> = manifest.windows.iter().map(|w| w.split).collect();
        assert!(splits.contains(&Split::Train));
        assert!(splits.contains(&Split::Test));
        // Third block of 40 is held out (holdout_every 3).
        assert!(splits[..80].iter().all(|s| *s == Split::Train));
        assert!(splits[80..120.min(splits.len())].iter().all(|s| *s == Split::Test));
    }

    #[test]
    fn occupied_output_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stale"), b"x").unwrap();
        let err = build_dataset(&tiny_config(), dir.path(), false).unwrap_err();
        assert_eq!(crate::exit::exit_code(&err), crate::exit::EXIT_VALIDATION);
        build_dataset(&tiny_config(), dir.path(), true).unwrap();
    }

    #[test]
    fn rebuilds_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let config = tiny_config();
        build_dataset(&config, a.path(), false).unwrap();
        build_dataset(&config, b.path(), false).unwrap();
        for name in ["manifest.json", "targets.bin", &window_file(0), &window_file(5)] {
            let x = std::fs::read(a.path().join(name)).unwrap();
            let y = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs between identical builds");
        }
    }

    #[test]
    fn samples_feed_the_training_step() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_config();
        build_dataset(&config, dir.path(), false).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        let sample = loaded.sample(3);
        assert_eq!(sample.features.len(), 64);
        assert_eq!(sample.target.labels.len(), 64);
        assert_eq!(sample.target.padded.len(), 64);
        assert!(sample
            .features
            .iter()
            .all(|row| row.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))));
    }
}
