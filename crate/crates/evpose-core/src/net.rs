//! Attention-based two-hand parameter regression and its training loop.
//!
//! The forward graph maps one normalized event cloud (`M x 5` rows from
//! [`normalize_cloud`]) to a flat 22-parameter vector per hand plus
//! per-event class logits:
//!
//! 1. a shared per-point MLP whose max-pooled context vector is
//!    concatenated back to every point before a final linear layer,
//!    producing the event features `F` (`M x feature_width`);
//! 2. one query branch per hand (`Q_L`, `Q_R`, same width as `F`) and a
//!    class head (`S`, `M x 4`), all reading `F`;
//! 3. feature-wise attention `A = softmax(Q^T S / sqrt(d_s))`,
//!    `H = F A` (`M x 4`), applied once per hand with that hand's `Q`;
//! 4. per-hand point-set encoders over `H` (shared per-point MLP,
//!    masked max-pool, MLP head) regressing the 22 raw parameters.
//!
//! The left and right regressor stacks share no weights. Everything is
//! built on [`Tape`], so [`train_step`] can push gradients of the
//! combined objective from [`crate::graph`] back into a
//! [`ModelWeights`] with Adam. `f32` is the training scalar type; the
//! same graph instantiated at `f64` backs the gradient checks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::collision::ConeConfig;
use crate::event::{normalize_cloud, EventCloud, FEATURES_PER_POINT};
use crate::graph::{
    pose_mesh_graph, real_total_loss_graph, total_loss_graph, HandConsts, IsecNodes,
    PredictionNodes,
};
use crate::hand::{pose_mesh, HandAssets, HandParams, PARAM_DIMS};
use crate::loss::{LossBreakdown, LossError, LossWeights, TwoHandPrediction, TwoHandTarget};
use crate::math::{box_muller, Real};
use crate::sim::CameraIntrinsics;
use crate::tape::{Axis, NanReport, NodeId, Tape, TapeError};

/// Per-event classes: left hand, right hand, background, none.
const SEG_WIDTH: usize = 4;

/// Added to padding rows before a max-pool. No finite activation can
/// beat a row pushed this far down, so pooled vectors only ever see
/// real points, and the pool routes no gradient into sentinels.
const PAD_GATE: f64 = -1e30;

/// Layer widths of the network; the array layout follows from these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Hidden widths of the shared per-point MLP before the context
    /// fuse. May be empty, in which case the raw 5 input channels are
    /// pooled and fused directly.
    pub backbone_widths: Vec<usize>,
    /// Width of the event features `F` and of the per-hand queries.
    pub feature_width: usize,
    /// Hidden width of the query branches and of the class head.
    pub branch_hidden: usize,
    /// Per-point width of the per-hand point-set encoders.
    pub pointnet_width: usize,
    /// Hidden width of the final per-hand MLP heads.
    pub head_hidden: usize,
    /// Normalize attention scores over feature channels, so each class
    /// column of `A` is a convex combination of channels (`true`), or
    /// over the class columns instead (`false`, kept for ablation).
    pub softmax_over_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_widths: alloc::vec![16, 32],
            feature_width: 256,
            branch_hidden: 16,
            pointnet_width: 128,
            head_hidden: 64,
            softmax_over_features: true,
        }
    }
}

struct LayerSpec {
    name: String,
    fan_in: usize,
    fan_out: usize,
}

/// Canonical layer order. Everything that walks the arrays — init,
/// checkpoint validation, the tape loader, the optimizer — goes
/// through this one list.
fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    assert!(
        cfg.feature_width > 0
            && cfg.branch_hidden > 0
            && cfg.pointnet_width > 0
            && cfg.head_hidden > 0,
        "layer widths must be positive"
    );
    let mut specs = Vec::new();
    let mut width = FEATURES_PER_POINT;
    for (i, &w) in cfg.backbone_widths.iter().enumerate() {
        assert!(w > 0, "layer widths must be positive");
        specs.push(LayerSpec { name: format!("backbone.{i}"), fan_in: width, fan_out: w });
        width = w;
    }
    specs.push(LayerSpec {
        name: String::from("fuse"),
        fan_in: width * 2,
        fan_out: cfg.feature_width,
    });
    for side in ["left", "right"] {
        specs.push(LayerSpec {
            name: format!("branch.{side}.0"),
            fan_in: cfg.feature_width,
            fan_out: cfg.branch_hidden,
        });
        specs.push(LayerSpec {
            name: format!("branch.{side}.1"),
            fan_in: cfg.branch_hidden,
            fan_out: cfg.feature_width,
        });
    }
    specs.push(LayerSpec {
        name: String::from("seg.0"),
        fan_in: cfg.feature_width,
        fan_out: cfg.branch_hidden,
    });
    specs.push(LayerSpec {
        name: String::from("seg.1"),
        fan_in: cfg.branch_hidden,
        fan_out: SEG_WIDTH,
    });
    for side in ["left", "right"] {
        specs.push(LayerSpec {
            name: format!("head.{side}.point"),
            fan_in: SEG_WIDTH,
            fan_out: cfg.pointnet_width,
        });
        specs.push(LayerSpec {
            name: format!("head.{side}.mlp"),
            fan_in: cfg.pointnet_width,
            fan_out: cfg.head_hidden,
        });
        specs.push(LayerSpec {
            name: format!("head.{side}.out"),
            fan_in: cfg.head_hidden,
            fan_out: PARAM_DIMS,
        });
    }
    specs
}

/// One named weight or bias matrix, row-major `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    /// Dotted layer name plus `.w` or `.b`, e.g. `branch.left.0.w`.
    pub name: String,
    /// Rows (the fan-in for weights, 1 for biases).
    pub rows: usize,
    /// Columns (the fan-out).
    pub cols: usize,
    /// Row-major values.
    pub data: Vec<f32>,
}

/// Every trainable array of the network, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    /// Widths the arrays were built for.
    pub config: ModelConfig,
    /// Seed the arrays were drawn from.
    pub seed: u64,
    /// Completed optimizer steps.
    pub step: u64,
    arrays: Vec<NamedArray>,
}

impl ModelWeights {
    /// Draws fresh weights: He-scaled normal entries, zero biases.
    ///
    /// The two output layers deviate from that: their weights start at
    /// 1% of He scale and their translation biases at a placement
    /// prior, so fresh predictions sit slightly apart and well in
    /// front of the camera instead of anywhere the random head
    /// reaches. Starting from a deep mutual overlap makes the
    /// interpenetration term enumerate thousands of cone pairs on the
    /// first step, and starting behind the camera breaks the
    /// pixel-supervised objective; the prior sidesteps both.
    pub fn init(config: ModelConfig, seed: u64) -> ModelWeights {
        let specs = layer_specs(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arrays = Vec::with_capacity(specs.len() * 2);
        for spec in &specs {
            let scale = (2.0 / spec.fan_in as f64).sqrt();
            let data = (0..spec.fan_in * spec.fan_out)
                .map(|_| (box_muller(&mut rng) * scale) as f32)
                .collect();
            arrays.push(NamedArray {
                name: format!("{}.w", spec.name),
                rows: spec.fan_in,
                cols: spec.fan_out,
                data,
            });
            arrays.push(NamedArray {
                name: format!("{}.b", spec.name),
                rows: 1,
                cols: spec.fan_out,
                data: alloc::vec![0.0; spec.fan_out],
            });
        }
        let mut weights = ModelWeights { config, seed, step: 0, arrays };
        for name in ["head.left.out.w", "head.right.out.w"] {
            for v in &mut weights.array_mut(name).data {
                *v *= 0.01;
            }
        }
        for (name, x) in [("head.left.out.b", -0.055f32), ("head.right.out.b", 0.055f32)] {
            let bias = weights.array_mut(name);
            bias.data[PARAM_DIMS - 3] = x;
            bias.data[PARAM_DIMS - 2] = -0.085;
            bias.data[PARAM_DIMS - 1] = 0.45;
        }
        weights
    }

    /// Arrays in canonical order.
    pub fn arrays(&self) -> &[NamedArray] {
        &self.arrays
    }

    /// Looks an array up by name.
    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    fn array_mut(&mut self, name: &str) -> &mut NamedArray {
        self.arrays.iter_mut().find(|a| a.name == name).expect("known array name")
    }

    /// True when every entry of every array is finite.
    pub fn all_finite(&self) -> bool {
        self.arrays.iter().all(|a| a.data.iter().all(|v| v.is_finite()))
    }

    /// Rebuilds weights from checkpointed arrays, validating names,
    /// shapes and finiteness against the canonical layout for `config`.
    pub fn from_parts(
        config: ModelConfig,
        seed: u64,
        step: u64,
        arrays: Vec<NamedArray>,
    ) -> Result<ModelWeights, NetError> {
        let specs = layer_specs(&config);
        if arrays.len() != specs.len() * 2 {
            return Err(NetError::ArrayCount { expected: specs.len() * 2, got: arrays.len() });
        }
        for (i, a) in arrays.iter().enumerate() {
            let spec = &specs[i / 2];
            let (suffix, rows, cols) = if i % 2 == 0 {
                ("w", spec.fan_in, spec.fan_out)
            } else {
                ("b", 1, spec.fan_out)
            };
            let expected = format!("{}.{}", spec.name, suffix);
            if a.name != expected {
                return Err(NetError::ArrayName { index: i, expected, got: a.name.clone() });
            }
            if a.rows != rows || a.cols != cols {
                return Err(NetError::ArrayShape {
                    name: a.name.clone(),
                    expected: (rows, cols),
                    got: (a.rows, a.cols),
                });
            }
            if a.data.len() != rows * cols {
                return Err(NetError::ArrayLen {
                    name: a.name.clone(),
                    expected: rows * cols,
                    got: a.data.len(),
                });
            }
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite { name: a.name.clone() });
            }
        }
        Ok(ModelWeights { config, seed, step, arrays })
    }
}

/// Errors from building or running the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetError {
    /// Every input row is padding (or there are no rows at all).
    EmptyCloud,
    /// Feature rows and padding flags disagree in length.
    LengthMismatch {
        /// Feature row count.
        rows: usize,
        /// Padding flag count.
        flags: usize,
    },
    /// Checkpointed array list has the wrong number of entries.
    ArrayCount {
        /// Arrays the layout calls for.
        expected: usize,
        /// Arrays provided.
        got: usize,
    },
    /// Checkpointed array is out of place.
    ArrayName {
        /// Position in the list.
        index: usize,
        /// Name the layout calls for there.
        expected: String,
        /// Name found.
        got: String,
    },
    /// Checkpointed array has the wrong dimensions.
    ArrayShape {
        /// Which array.
        name: String,
        /// Rows and columns the layout calls for.
        expected: (usize, usize),
        /// Rows and columns found.
        got: (usize, usize),
    },
    /// Checkpointed array data length contradicts its dimensions.
    ArrayLen {
        /// Which array.
        name: String,
        /// Values its dimensions imply.
        expected: usize,
        /// Values found.
        got: usize,
    },
    /// Checkpointed array holds a non-finite value.
    NonFinite {
        /// Which array.
        name: String,
    },
}

impl core::fmt::Display for NetError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            NetError::EmptyCloud => write!(f, "empty cloud"),
            NetError::LengthMismatch { rows, flags } => {
                write!(f, "{rows} feature rows but {flags} padding flags")
            }
            NetError::ArrayCount { expected, got } => {
                write!(f, "expected {expected} weight arrays, got {got}")
            }
            NetError::ArrayName { index, expected, got } => {
                write!(f, "array {index}: expected `{expected}`, got `{got}`")
            }
            NetError::ArrayShape { name, expected, got } => write!(
                f,
                "array `{name}`: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            NetError::ArrayLen { name, expected, got } => {
                write!(f, "array `{name}` holds {got} values, dimensions imply {expected}")
            }
            NetError::NonFinite { name } => {
                write!(f, "array `{name}` holds a non-finite value")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for NetError {}

/// Tape handles of the loaded weight arrays.
pub struct WeightNodes {
    /// One node per array, aligned with [`ModelWeights::arrays`].
    pub all: Vec<NodeId>,
    softmax_over_features: bool,
    backbone: Vec<(NodeId, NodeId)>,
    fuse: (NodeId, NodeId),
    branch_left: [(NodeId, NodeId); 2],
    branch_right: [(NodeId, NodeId); 2],
    seg: [(NodeId, NodeId); 2],
    head_left: [(NodeId, NodeId); 3],
    head_right: [(NodeId, NodeId); 3],
}

/// Loads every array onto the tape, as trainable parameters or frozen
/// constants.
pub fn load_weights<T: Real>(
    t: &mut Tape<T>,
    weights: &ModelWeights,
    trainable: bool,
) -> WeightNodes {
    let mut all = Vec::with_capacity(weights.arrays().len());
    for a in weights.arrays() {
        let data: Vec<T> = a.data.iter().map(|&v| T::from_f64(f64::from(v))).collect();
        all.push(if trainable {
            t.param(a.rows, a.cols, data)
        } else {
            t.constant(a.rows, a.cols, data)
        });
    }
    let mut cursor = 0;
    let pair = |cursor: &mut usize| {
        let p = (all[*cursor], all[*cursor + 1]);
        *cursor += 2;
        p
    };
    let mut backbone = Vec::with_capacity(weights.config.backbone_widths.len());
    for _ in 0..weights.config.backbone_widths.len() {
        backbone.push(pair(&mut cursor));
    }
    let fuse = pair(&mut cursor);
    let branch_left = [pair(&mut cursor), pair(&mut cursor)];
    let branch_right = [pair(&mut cursor), pair(&mut cursor)];
    let seg = [pair(&mut cursor), pair(&mut cursor)];
    let head_left = [pair(&mut cursor), pair(&mut cursor), pair(&mut cursor)];
    let head_right = [pair(&mut cursor), pair(&mut cursor), pair(&mut cursor)];
    debug_assert_eq!(cursor, all.len());
    WeightNodes {
        all,
        softmax_over_features: weights.config.softmax_over_features,
        backbone,
        fuse,
        branch_left,
        branch_right,
        seg,
        head_left,
        head_right,
    }
}

fn affine<T: Real>(t: &mut Tape<T>, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
    let prod = t.matmul(x, w, false, false);
    t.add(prod, b)
}

fn two_layer<T: Real>(t: &mut Tape<T>, x: NodeId, layers: &[(NodeId, NodeId); 2]) -> NodeId {
    let lin = affine(t, x, layers[0].0, layers[0].1);
    let hidden = t.relu(lin);
    affine(t, hidden, layers[1].0, layers[1].1)
}

/// Shared per-point MLP with a pooled global context re-concatenated
/// to every point before the final linear layer.
///
/// `input` is `M x 5`, `mask` an `M x 1` column holding 0 for real
/// rows and [`PAD_GATE`] for padding, so the context max-pool only
/// sees real points. Padding rows still produce feature rows; the
/// downstream pools and the segmentation term mask them out.
pub fn extract_features<T: Real>(
    t: &mut Tape<T>,
    wn: &WeightNodes,
    input: NodeId,
    mask: NodeId,
) -> NodeId {
    let mut h = input;
    for &(w, b) in &wn.backbone {
        let lin = affine(t, h, w, b);
        h = t.relu(lin);
    }
    let gated = t.add(h, mask);
    let ctx = t.max_reduce(gated, Axis::PerCol);
    let m = t.shape(input).0;
    let ctx_rows = t.repeat_row(ctx, m);
    let fused = t.concat_cols(&[h, ctx_rows]);
    affine(t, fused, wn.fuse.0, wn.fuse.1)
}

/// Feature-wise attention: `A = softmax(Q^T S / sqrt(d_s))`,
/// `H = F A`.
///
/// Returns `(A, H)`. With `over_features` set, each class column of
/// the `d_q x d_s` score matrix is normalized to sum 1 over the
/// feature channels, making every `H` column a convex combination of
/// the channels of `F` keyed by class evidence; otherwise rows are
/// normalized instead.
pub fn attention_block<T: Real>(
    t: &mut Tape<T>,
    q: NodeId,
    s: NodeId,
    f: NodeId,
    over_features: bool,
) -> (NodeId, NodeId) {
    let (mq, dq) = t.shape(q);
    let (ms, ds) = t.shape(s);
    let (mf, df) = t.shape(f);
    assert_eq!(mq, ms, "query and score row counts differ");
    assert_eq!(mq, mf, "query and feature row counts differ");
    assert_eq!(dq, df, "query and feature widths differ");
    let scores = t.matmul(q, s, true, false);
    let scaled = t.scale(scores, T::from_f64(1.0 / (ds as f64).sqrt()));
    let axis = if over_features { Axis::PerCol } else { Axis::PerRow };
    let a = t.softmax(scaled, axis);
    let h = t.matmul(f, a, false, false);
    (a, h)
}

/// Per-point MLP on the attended features, masked max-pool, then the
/// two-layer head down to the 22 raw parameters (column vector).
fn regress_hand<T: Real>(
    t: &mut Tape<T>,
    h: NodeId,
    mask: NodeId,
    layers: &[(NodeId, NodeId); 3],
) -> NodeId {
    let lin = affine(t, h, layers[0].0, layers[0].1);
    let point = t.relu(lin);
    let gated = t.add(point, mask);
    let pooled = t.max_reduce(gated, Axis::PerCol);
    let lin2 = affine(t, pooled, layers[1].0, layers[1].1);
    let hidden = t.relu(lin2);
    let out = affine(t, hidden, layers[2].0, layers[2].1);
    t.reshape(out, PARAM_DIMS, 1)
}

/// Node handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Event features `F`, `M x feature_width`.
    pub features: NodeId,
    /// Class logits `S`, `M x 4`.
    pub seg_logits: NodeId,
    /// Left attention matrix `A`, `feature_width x 4`.
    pub attn_left: NodeId,
    /// Right attention matrix.
    pub attn_right: NodeId,
    /// Left-hand flat parameters, 22x1.
    pub params_left: NodeId,
    /// Right-hand flat parameters, 22x1.
    pub params_right: NodeId,
}

/// Builds the full forward pass over normalized feature rows.
///
/// `rows` come from [`normalize_cloud`]; `padded` flags which of them
/// are sentinels or resampling duplicates. Deterministic given weights
/// and input: every reduction runs in a fixed order.
pub fn forward_graph<T: Real>(
    t: &mut Tape<T>,
    wn: &WeightNodes,
    rows: &[[f64; FEATURES_PER_POINT]],
    padded: &[bool],
) -> Result<ForwardNodes, NetError> {
    if rows.len() != padded.len() {
        return Err(NetError::LengthMismatch { rows: rows.len(), flags: padded.len() });
    }
    if padded.iter().all(|p| *p) {
        return Err(NetError::EmptyCloud);
    }
    let m = rows.len();
    let mut flat = Vec::with_capacity(m * FEATURES_PER_POINT);
    for row in rows {
        flat.extend(row.iter().map(|&v| T::from_f64(v)));
    }
    let input = t.constant(m, FEATURES_PER_POINT, flat);
    let mask_data = padded
        .iter()
        .map(|&p| T::from_f64(if p { PAD_GATE } else { 0.0 }))
        .collect();
    let mask = t.constant(m, 1, mask_data);

    let features = extract_features(t, wn, input, mask);
    let q_left = two_layer(t, features, &wn.branch_left);
    let q_right = two_layer(t, features, &wn.branch_right);
    let seg_logits = two_layer(t, features, &wn.seg);
    let (attn_left, h_left) =
        attention_block(t, q_left, seg_logits, features, wn.softmax_over_features);
    let (attn_right, h_right) =
        attention_block(t, q_right, seg_logits, features, wn.softmax_over_features);
    let params_left = regress_hand(t, h_left, mask, &wn.head_left);
    let params_right = regress_hand(t, h_right, mask, &wn.head_right);
    Ok(ForwardNodes { features, seg_logits, attn_left, attn_right, params_left, params_right })
}

fn decode_params(t: &Tape<f32>, node: NodeId) -> HandParams {
    let v = t.value(node);
    let mut flat = [0.0; PARAM_DIMS];
    for (dst, src) in flat.iter_mut().zip(v) {
        *dst = f64::from(*src);
    }
    HandParams::from_flat(&flat)
}

/// Runs the network on one cloud and decodes both hands' meshes.
///
/// Inference runs at `f32`, matching training; the decoded parameters
/// then drive the `f64` hand model for joints.
pub fn forward_full(
    weights: &ModelWeights,
    cloud: &EventCloud,
    sensor_width: u16,
    sensor_height: u16,
    assets_left: &HandAssets,
    assets_right: &HandAssets,
) -> Result<TwoHandPrediction, NetError> {
    let rows = normalize_cloud(cloud, sensor_width, sensor_height);
    let mut t: Tape<f32> = Tape::new();
    let wn = load_weights(&mut t, weights, false);
    let fwd = forward_graph(&mut t, &wn, &rows, &cloud.padded)?;
    let left = decode_params(&t, fwd.params_left);
    let right = decode_params(&t, fwd.params_right);
    let posed_left = pose_mesh(&left, assets_left);
    let posed_right = pose_mesh(&right, assets_right);
    let seg = t.value(fwd.seg_logits);
    let mut seg_logits = Vec::with_capacity(rows.len());
    for i in 0..rows.len() {
        let mut row = [0.0; SEG_WIDTH];
        for (j, v) in row.iter_mut().enumerate() {
            *v = f64::from(seg[i * SEG_WIDTH + j]);
        }
        seg_logits.push(row);
    }
    Ok(TwoHandPrediction {
        left,
        right,
        joints_left: posed_left.joints.to_vec(),
        joints_right: posed_right.joints.to_vec(),
        seg_logits,
    })
}

/// Which combined objective a training step optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Full supervision: 3D joints, parameters and event classes.
    Supervised,
    /// Pixel supervision: projected joints replace the 3D terms.
    PixelSupervised {
        /// Camera both prediction and reference project through.
        intrinsics: CameraIntrinsics,
    },
}

/// Hyper-parameters of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Adam learning rate.
    pub lr: f64,
    /// Adam first-moment decay.
    pub beta1: f64,
    /// Adam second-moment decay.
    pub beta2: f64,
    /// Adam denominator guard.
    pub eps: f64,
    /// Term weights of the combined objective.
    pub loss: LossWeights,
    /// Supervision variant.
    pub objective: Objective,
    /// Cone sizing for the interpenetration term.
    pub cone: ConeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: LossWeights::default(),
            objective: Objective::Supervised,
            cone: ConeConfig::default(),
        }
    }
}

/// One training example: normalized feature rows plus the reference.
///
/// The reference's padding flags double as the rows' padding flags, so
/// they must align with `features`.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// Normalized feature rows, `M x 5`.
    pub features: Vec<[f64; FEATURES_PER_POINT]>,
    /// Reference parameters, joints, labels and padding flags.
    pub target: TwoHandTarget,
}

/// First and second Adam moments, aligned with the weight arrays.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// Completed updates.
    pub steps: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zero moments shaped like `weights`.
    pub fn new(weights: &ModelWeights) -> AdamState {
        AdamState {
            steps: 0,
            m: weights.arrays().iter().map(|a| alloc::vec![0.0; a.data.len()]).collect(),
            v: weights.arrays().iter().map(|a| alloc::vec![0.0; a.data.len()]).collect(),
        }
    }
}

/// What one optimizer step saw.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    /// Batch-mean term values (`supervised_rows` summed, not averaged).
    pub breakdown: LossBreakdown,
    /// Optimizer steps completed after this one.
    pub step: u64,
}

/// Errors from one training step.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    /// The batch holds no samples.
    EmptyBatch,
    /// Forward-pass input was rejected.
    Net(NetError),
    /// The objective rejected its inputs.
    Loss(LossError),
    /// Backward failed.
    Tape(TapeError),
    /// The loss came out non-finite; training must stop.
    NonFinite {
        /// Batch index that produced it.
        sample: usize,
        /// First non-finite tensor on that sample's tape.
        report: NanReport,
    },
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::EmptyBatch => write!(f, "empty batch"),
            TrainError::Net(e) => write!(f, "forward pass: {e}"),
            TrainError::Loss(e) => write!(f, "objective: {e}"),
            TrainError::Tape(e) => write!(f, "backward: {e}"),
            TrainError::NonFinite { sample, report } => {
                write!(f, "non-finite loss on batch item {sample}: {report}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for TrainError {}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Net(e)
    }
}

impl From<LossError> for TrainError {
    fn from(e: LossError) -> Self {
        TrainError::Loss(e)
    }
}

impl From<TapeError> for TrainError {
    fn from(e: TapeError) -> Self {
        TrainError::Tape(e)
    }
}

/// Runs forward/backward over a batch and applies one Adam update.
///
/// Per-sample gradients accumulate in batch order, arrays update in
/// canonical order, and each sample's graph evaluates with fixed
/// reduction order, so a step is bit-deterministic for a given batch.
/// A non-finite loss aborts before touching the weights, reporting the
/// first offending tensor of that sample's graph.
pub fn train_step(
    weights: &mut ModelWeights,
    opt: &mut AdamState,
    batch: &[TrainSample],
    assets_left: &HandAssets,
    assets_right: &HandAssets,
    cfg: &TrainConfig,
) -> Result<StepReport, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut acc: Vec<Vec<f32>> =
        weights.arrays().iter().map(|a| alloc::vec![0.0; a.data.len()]).collect();
    let mut sums = [0.0f64; 7];
    let mut supervised_rows = 0usize;
    for (si, sample) in batch.iter().enumerate() {
        let mut t: Tape<f32> = Tape::new();
        let wn = load_weights(&mut t, weights, true);
        let fwd = forward_graph(&mut t, &wn, &sample.features, &sample.target.padded)?;
        let consts_left = HandConsts::load(&mut t, assets_left);
        let consts_right = HandConsts::load(&mut t, assets_right);
        let posed_left = pose_mesh_graph(&mut t, fwd.params_left, &consts_left);
        let posed_right = pose_mesh_graph(&mut t, fwd.params_right, &consts_right);
        let pred = PredictionNodes {
            params_left: fwd.params_left,
            params_right: fwd.params_right,
            joints_left: posed_left.joints,
            joints_right: posed_right.joints,
            seg_logits: fwd.seg_logits,
        };
        // Catch non-finite activations before the interpenetration
        // term walks the posed meshes; collision queries assume finite
        // coordinates.
        if let Some(report) = t.scan_non_finite() {
            return Err(TrainError::NonFinite { sample: si, report });
        }
        let isec = IsecNodes {
            verts_left: posed_left.vertices,
            faces_left: &assets_left.faces,
            verts_right: posed_right.vertices,
            faces_right: &assets_right.faces,
            config: cfg.cone,
        };
        let graph = match cfg.objective {
            Objective::Supervised => {
                total_loss_graph(&mut t, &pred, &sample.target, &cfg.loss, Some(&isec))
            }
            Objective::PixelSupervised { intrinsics } => real_total_loss_graph(
                &mut t,
                &pred,
                &sample.target,
                &cfg.loss,
                &intrinsics,
                &intrinsics,
                Some(&isec),
            )?,
        };
        let total = f64::from(t.value(graph.total)[0]);
        if !total.is_finite() {
            let report =
                t.scan_non_finite().expect("a non-finite loss implies a non-finite node");
            return Err(TrainError::NonFinite { sample: si, report });
        }
        let grads = t.backward(graph.total)?;
        for (dst, &node) in acc.iter_mut().zip(&wn.all) {
            for (d, g) in dst.iter_mut().zip(grads.get(node)) {
                *d += *g;
            }
        }
        let terms =
            [graph.joints, graph.mano, graph.seg, graph.interhand, graph.isec, graph.reg, graph.total];
        for (slot, node) in sums.iter_mut().zip(terms) {
            *slot += f64::from(t.value(node)[0]);
        }
        supervised_rows += graph.supervised_rows;
    }

    opt.steps += 1;
    weights.step += 1;
    let inv = 1.0 / batch.len() as f32;
    let lr = cfg.lr as f32;
    let b1 = cfg.beta1 as f32;
    let b2 = cfg.beta2 as f32;
    let eps = cfg.eps as f32;
    let c1 = (1.0 - cfg.beta1.powi(opt.steps as i32)) as f32;
    let c2 = (1.0 - cfg.beta2.powi(opt.steps as i32)) as f32;
    for ((arr, g), (m, v)) in
        weights.arrays.iter_mut().zip(&acc).zip(opt.m.iter_mut().zip(opt.v.iter_mut()))
    {
        for i in 0..arr.data.len() {
            let grad = g[i] * inv;
            m[i] = b1 * m[i] + (1.0 - b1) * grad;
            v[i] = b2 * v[i] + (1.0 - b2) * grad * grad;
            arr.data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
        }
    }

    let n = batch.len() as f64;
    let breakdown = LossBreakdown {
        joints: sums[0] / n,
        mano: sums[1] / n,
        seg: sums[2] / n,
        interhand: sums[3] / n,
        isec: sums[4] / n,
        reg: sums[5] / n,
        supervised_rows,
        total: sums[6] / n,
    };
    Ok(StepReport { breakdown, step: weights.step })
}
