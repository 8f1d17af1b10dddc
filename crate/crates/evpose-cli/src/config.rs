//! Run configuration.
//!
//! One JSON document drives every subcommand. Each section has desk
//! defaults, so an empty object `{}` is a complete, runnable
//! configuration; unknown keys anywhere are rejected rather than
//! ignored, and every value is range-checked up front so commands can
//! assume a valid config throughout.

use evpose_core::loss::LossWeights;
use evpose_core::net::{ModelConfig, TrainConfig};
use evpose_core::scene::{shipped_scripts, SceneScript};
use evpose_core::sim::{CameraIntrinsics, SimConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// A rejected configuration: which field and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Dotted path of the offending field, `"$"` for document-level
    /// problems.
    pub field: String,
    /// What was wrong with it.
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> ConfigError {
        ConfigError { field: String::from(field), message: message.into() }
    }
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "config field {}: {}", self.field, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Sensor geometry of the simulated camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSection {
    /// Sensor width in pixels.
    pub width: u16,
    /// Sensor height in pixels.
    pub height: u16,
    /// Vertical field of view in degrees.
    pub vfov_deg: f64,
}

impl Default for SensorSection {
    fn default() -> Self {
        SensorSection { width: 346, height: 240, vfov_deg: 30.0 }
    }
}

impl SensorSection {
    /// Square-pixel intrinsics for this sensor.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::from_vertical_fov(self.width, self.height, self.vfov_deg.to_radians())
    }
}

/// Event-simulator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Log-brightness change per emitted event.
    pub contrast_threshold: f64,
    /// Brightness floor added before taking logs.
    pub log_eps: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        SimSection { contrast_threshold: d.contrast_threshold, log_eps: d.log_eps }
    }
}

impl SimSection {
    /// Core simulator config.
    pub fn to_core(&self) -> SimConfig {
        SimConfig { contrast_threshold: self.contrast_threshold, log_eps: self.log_eps }
    }
}

/// Sliding-window and resampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSection {
    /// Window length in microseconds.
    pub length_us: u64,
    /// Window stride in microseconds.
    pub stride_us: u64,
    /// Fixed cloud size M after resampling.
    pub resample_points: usize,
}

impl Default for WindowSection {
    fn default() -> Self {
        WindowSection { length_us: 2000, stride_us: 1000, resample_points: 512 }
    }
}

impl WindowSection {
    /// Core window spec.
    pub fn spec(&self) -> evpose_core::event::WindowSpec {
        evpose_core::event::WindowSpec { length_us: self.length_us, stride_us: self.stride_us }
    }
}

/// Which takes go into the dataset and how windows are split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Names of the scripted takes to render, in order.
    pub scripts: Vec<String>,
    /// Optional take truncation in microseconds (full takes when
    /// absent). Keyframes past the cut are dropped.
    pub take_us: Option<u64>,
    /// Contiguous windows per split block.
    pub block_windows: usize,
    /// Every `holdout_every`-th block of a take is held out as test
    /// data; the rest train. Held-out windows therefore come from the
    /// same takes they were rendered with.
    pub holdout_every: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            scripts: vec![String::from("clap"), String::from("crossover")],
            take_us: None,
            block_windows: 250,
            holdout_every: 5,
        }
    }
}

/// Network widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Hidden widths of the shared per-point MLP.
    pub backbone_widths: Vec<usize>,
    /// Width of the event features and per-hand queries.
    pub feature_width: usize,
    /// Hidden width of the query branches and the class head.
    pub branch_hidden: usize,
    /// Per-point width of the per-hand point-set encoders.
    pub pointnet_width: usize,
    /// Hidden width of the final per-hand heads.
    pub head_hidden: usize,
    /// Normalize attention over feature channels (`true`) or over
    /// class columns (`false`).
    pub softmax_over_features: bool,
}

impl Default for ModelSection {
    /// Desk-scale profile: half the library's default feature and
    /// encoder widths, so a full training run fits a laptop-CPU
    /// budget. The library defaults remain available by spelling them
    /// out in the config.
    fn default() -> Self {
        ModelSection {
            backbone_widths: vec![16, 32],
            feature_width: 128,
            branch_hidden: 16,
            pointnet_width: 64,
            head_hidden: 64,
            softmax_over_features: true,
        }
    }
}

impl ModelSection {
    /// Core model config.
    pub fn to_core(&self) -> ModelConfig {
        ModelConfig {
            backbone_widths: self.backbone_widths.clone(),
            feature_width: self.feature_width,
            branch_hidden: self.branch_hidden,
            pointnet_width: self.pointnet_width,
            head_hidden: self.head_hidden,
            softmax_over_features: self.softmax_over_features,
        }
    }
}

/// Adam optimizer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    /// Learning rate.
    pub lr: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator guard.
    pub eps: f64,
}

impl Default for OptimSection {
    fn default() -> Self {
        OptimSection { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Objective term weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    /// 3D joint term weight.
    pub joints: f64,
    /// Hand-parameter term weight.
    pub mano: f64,
    /// Segmentation term weight.
    pub seg: f64,
    /// Inter-hand consistency weight.
    pub interhand: f64,
    /// Interpenetration weight; `0` disables the term.
    pub isec: f64,
    /// Pose regularizer factor.
    pub theta: f64,
    /// Shape regularizer factor.
    pub beta: f64,
    /// 2D joint term weight (label-free variant).
    pub joints2d: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        let d = LossWeights::default();
        LossSection {
            joints: d.lambda_joints,
            mano: d.lambda_mano,
            seg: d.lambda_seg,
            interhand: d.lambda_interhand,
            isec: d.lambda_isec,
            theta: d.lambda_theta,
            beta: d.lambda_beta,
            joints2d: d.lambda_joints2d,
        }
    }
}

impl LossSection {
    /// Core loss weights.
    pub fn to_core(&self) -> LossWeights {
        LossWeights {
            lambda_joints: self.joints,
            lambda_mano: self.mano,
            lambda_seg: self.seg,
            lambda_interhand: self.interhand,
            lambda_isec: self.isec,
            lambda_theta: self.theta,
            lambda_beta: self.beta,
            lambda_joints2d: self.joints2d,
        }
    }
}

/// Training-loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Optimizer steps to run.
    pub iterations: u64,
    /// Samples per step.
    pub batch_size: usize,
    /// Steps between CSV log rows (first and last always log).
    pub log_every: u64,
    /// Steps between checkpoint files (the final weights are always
    /// written).
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { iterations: 5000, batch_size: 8, log_every: 50, checkpoint_every: 1000 }
    }
}

/// Evaluation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Largest keypoint threshold in millimeters.
    pub max_threshold_mm: f64,
    /// Threshold grid step in millimeters.
    pub step_mm: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { max_threshold_mm: 100.0, step_mm: 1.0 }
    }
}

impl EvalSection {
    /// The threshold grid.
    pub fn thresholds(&self) -> Vec<f64> {
        evpose_core::metrics::uniform_thresholds(self.max_threshold_mm, self.step_mm)
    }
}

/// Benchmark parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    /// Benchmark stream length in microseconds.
    pub take_us: u64,
    /// Windows to time the network forward pass on.
    pub forward_samples: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { take_us: 3_000_000, forward_samples: 32 }
    }
}

/// Seeds of the independent random streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Hand-asset generation.
    pub assets: u64,
    /// Dataset generation (per-window resampling).
    pub data: u64,
    /// Weight init and batch shuffling.
    pub train: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        SeedSection { assets: 7, data: 1000, train: 42 }
    }
}

/// The complete run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Camera geometry.
    pub sensor: SensorSection,
    /// Event simulator.
    pub sim: SimSection,
    /// Windowing and resampling.
    pub windows: WindowSection,
    /// Scripts and split policy.
    pub data: DataSection,
    /// Network widths.
    pub model: ModelSection,
    /// Optimizer.
    pub optim: OptimSection,
    /// Objective weights.
    pub loss: LossSection,
    /// Training loop.
    pub train: TrainSection,
    /// Evaluation grid.
    pub eval: EvalSection,
    /// Benchmark sizing.
    pub bench: BenchSection,
    /// Random streams.
    pub seeds: SeedSection,
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<RunConfig, ConfigError> {
        let config: RunConfig = serde_json::from_str(text)
            .map_err(|e| ConfigError::new("$", format!("invalid JSON config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses and validates a config file.
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        Ok(Self::from_json(&text)?)
    }

    /// Range-checks every field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let finite_pos = |field: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be finite and positive, got {v}")))
            }
        };
        let finite_nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, format!("must be finite and non-negative, got {v}")))
            }
        };
        let nonzero = |field: &str, v: usize| {
            if v > 0 {
                Ok(())
            } else {
                Err(ConfigError::new(field, "must be positive"))
            }
        };

        if self.sensor.width < 8 || self.sensor.height < 8 {
            return Err(ConfigError::new(
                "sensor",
                format!("sensor must be at least 8x8, got {}x{}", self.sensor.width, self.sensor.height),
            ));
        }
        if !(self.sensor.vfov_deg.is_finite() && (1.0..179.0).contains(&self.sensor.vfov_deg)) {
            return Err(ConfigError::new(
                "sensor.vfov_deg",
                format!("must lie in [1, 179), got {}", self.sensor.vfov_deg),
            ));
        }
        finite_pos("sim.contrast_threshold", self.sim.contrast_threshold)?;
        finite_pos("sim.log_eps", self.sim.log_eps)?;
        if self.windows.length_us == 0 || self.windows.stride_us == 0 {
            return Err(ConfigError::new("windows", "window length and stride must be positive"));
        }
        nonzero("windows.resample_points", self.windows.resample_points)?;
        if self.windows.resample_points > u16::MAX as usize {
            return Err(ConfigError::new(
                "windows.resample_points",
                format!("must fit u16, got {}", self.windows.resample_points),
            ));
        }
        if self.data.scripts.is_empty() {
            return Err(ConfigError::new("data.scripts", "at least one script is required"));
        }
        let known: Vec<String> = shipped_scripts().into_iter().map(|s| s.name).collect();
        for name in &self.data.scripts {
            if !known.contains(name) {
                return Err(ConfigError::new(
                    "data.scripts",
                    format!("unknown script {name:?}; shipped scripts: {known:?}"),
                ));
            }
        }
        if let Some(take) = self.data.take_us {
            if take < self.windows.length_us {
                return Err(ConfigError::new(
                    "data.take_us",
                    format!("take of {take} us is shorter than one {} us window", self.windows.length_us),
                ));
            }
        }
        nonzero("data.block_windows", self.data.block_windows)?;
        if self.data.holdout_every < 2 {
            return Err(ConfigError::new(
                "data.holdout_every",
                "must be at least 2 so both splits are non-empty",
            ));
        }
        for (i, w) in self.model.backbone_widths.iter().enumerate() {
            nonzero(&format!("model.backbone_widths[{i}]"), *w)?;
        }
        nonzero("model.feature_width", self.model.feature_width)?;
        nonzero("model.branch_hidden", self.model.branch_hidden)?;
        nonzero("model.pointnet_width", self.model.pointnet_width)?;
        nonzero("model.head_hidden", self.model.head_hidden)?;
        finite_pos("optim.lr", self.optim.lr)?;
        for (field, v) in [("optim.beta1", self.optim.beta1), ("optim.beta2", self.optim.beta2)] {
            if !(v.is_finite() && (0.0..1.0).contains(&v)) {
                return Err(ConfigError::new(field, format!("must lie in [0, 1), got {v}")));
            }
        }
        finite_pos("optim.eps", self.optim.eps)?;
        for (field, v) in [
            ("loss.joints", self.loss.joints),
            ("loss.mano", self.loss.mano),
            ("loss.seg", self.loss.seg),
            ("loss.interhand", self.loss.interhand),
            ("loss.isec", self.loss.isec),
            ("loss.theta", self.loss.theta),
            ("loss.beta", self.loss.beta),
            ("loss.joints2d", self.loss.joints2d),
        ] {
            finite_nonneg(field, v)?;
        }
        if self.train.iterations == 0 {
            return Err(ConfigError::new("train.iterations", "must be positive"));
        }
        nonzero("train.batch_size", self.train.batch_size)?;
        if self.train.log_every == 0 || self.train.checkpoint_every == 0 {
            return Err(ConfigError::new("train", "log_every and checkpoint_every must be positive"));
        }
        finite_pos("eval.max_threshold_mm", self.eval.max_threshold_mm)?;
        finite_pos("eval.step_mm", self.eval.step_mm)?;
        if self.eval.step_mm > self.eval.max_threshold_mm {
            return Err(ConfigError::new("eval.step_mm", "must not exceed max_threshold_mm"));
        }
        if self.bench.take_us < self.windows.length_us {
            return Err(ConfigError::new(
                "bench.take_us",
                "benchmark stream must cover at least one window",
            ));
        }
        nonzero("bench.forward_samples", self.bench.forward_samples)?;
        Ok(())
    }

    /// The configured scripts: truncated to `data.take_us` when set,
    /// rendered through the configured camera.
    pub fn scene_scripts(&self) -> Result<Vec<SceneScript>, ConfigError> {
        let camera = self.sensor.intrinsics();
        let by_name: Vec<SceneScript> = shipped_scripts();
        let mut out = Vec::with_capacity(self.data.scripts.len());
        for name in &self.data.scripts {
            let mut script = by_name
                .iter()
                .find(|s| &s.name == name)
                .cloned()
                .ok_or_else(|| ConfigError::new("data.scripts", format!("unknown script {name:?}")))?;
            script.camera = camera;
            if let Some(take) = self.data.take_us {
                truncate_script(&mut script, take);
            }
            script
                .validate()
                .map_err(|e| ConfigError::new("data.take_us", format!("script {name:?}: {e}")))?;
            out.push(script);
        }
        Ok(out)
    }

    /// Core training config with this run's weights and optimizer.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.optim.lr,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            eps: self.optim.eps,
            loss: self.loss.to_core(),
            ..TrainConfig::default()
        }
    }
}

/// Cuts a script down to `take_us`, dropping keyframes past the cut.
///
/// Both tracks keep at least their first keyframe, so a truncated take
/// still poses its hands (constant past the last kept keyframe).
pub fn truncate_script(script: &mut SceneScript, take_us: u64) {
    script.duration_us = script.duration_us.min(take_us);
    for track in [&mut script.left, &mut script.right] {
        let keep = track.iter().take_while(|k| k.t_us <= take_us).count().max(1).min(track.len());
        track.truncate(keep);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_a_full_default_config() {
        let config = RunConfig::from_json("{}").unwrap();
        assert_eq!(config, RunConfig::default());
        assert_eq!(config.windows.length_us, 2000);
        assert_eq!(config.train.iterations, 5000);
        assert_eq!(config.data.scripts, ["clap", "crossover"]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        for doc in [
            r#"{"window_len": 5}"#,
            r#"{"windows": {"length_us": 2000, "overlap": 3}}"#,
            r#"{"optim": {"momentum": 0.9}}"#,
        ] {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.field, "$", "{doc} should fail at parse time");
        }
    }

    #[test]
    fn out_of_range_values_name_their_field() {
        let cases = [
            (r#"{"optim": {"lr": 0.0}}"#, "optim.lr"),
            (r#"{"optim": {"beta1": 1.0}}"#, "optim.beta1"),
            (r#"{"windows": {"stride_us": 0}}"#, "windows"),
            (r#"{"data": {"scripts": []}}"#, "data.scripts"),
            (r#"{"data": {"scripts": ["juggle"]}}"#, "data.scripts"),
            (r#"{"data": {"holdout_every": 1}}"#, "data.holdout_every"),
            (r#"{"loss": {"isec": -1.0}}"#, "loss.isec"),
            (r#"{"eval": {"step_mm": 200.0}}"#, "eval.step_mm"),
            (r#"{"sensor": {"width": 4}}"#, "sensor"),
        ];
        for (doc, field) in cases {
            let err = RunConfig::from_json(doc).unwrap_err();
            assert_eq!(err.field, field, "{doc}");
        }
    }

    #[test]
    fn nan_weights_are_rejected() {
        let mut config = RunConfig::default();
        config.loss.mano = f64::NAN;
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_roundtrips_through_json() {
        let config = RunConfig::default();
        let text = serde_json::to_string_pretty(&config).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), config);
    }

    #[test]
    fn scripts_resolve_and_truncate() {
        let mut config = RunConfig::default();
        config.data.take_us = Some(2_000_000);
        let scripts = config.scene_scripts().unwrap();
        assert_eq!(scripts.len(), 2);
        for s in &scripts {
            assert_eq!(s.duration_us, 2_000_000);
            assert!(s.left.last().unwrap().t_us <= 2_000_000);
            assert!(s.validate().is_ok());
        }
    }

    #[test]
    fn truncation_below_one_window_is_rejected() {
        let mut config = RunConfig::default();
        config.data.take_us = Some(1);
        let err = config.validate().unwrap_err();
        assert_eq!(err.field, "data.take_us");
    }
}
