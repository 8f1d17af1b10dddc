//! `eval`: score predictions against a dataset's references.
//!
//! Outputs under `--out`: `report.json` (aggregate and per-script
//! AUCs plus the gated interpenetration summary) and the two accuracy
//! curves `r_curve.csv` / `rr_curve.csv` (`threshold_mm,value` rows).

use super::ensure_out_dir;
use crate::checkpoint::load_checkpoint;
use crate::cli::{CommonArgs, SeedStream, SplitArg};
use crate::dataset::{load_dataset, LoadedDataset};
use crate::exit::validation_err;
use evpose_core::collision::collision_percentage;
use evpose_core::hand::{pose_mesh, HandParams, ROOT_JOINT};
use evpose_core::math::V3;
use evpose_core::metrics::{
    auc, gated_coll_percent, pck_curve, relative_errors_mm, relative_root_errors_mm, EvalReport,
    GatedCollision, PckCurve, SequenceEval, COLL_GATE_M,
};
use evpose_core::net::{forward_full, ModelWeights};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

/// Where the evaluated joints and meshes come from.
pub enum Predictor<'a> {
    /// Run the network per window.
    Model(&'a ModelWeights),
    /// Replay the reference as the prediction (harness self-check; a
    /// perfect replay scores AUC 1 on every curve).
    ReplayGt,
}

/// One window's contribution, gathered before pooling.
struct WindowScores {
    script: usize,
    r_errors: Vec<f64>,
    rr_errors: Vec<f64>,
    roots: (V3, V3),
    /// Interpenetration percentage; computed only when the roots pass
    /// the proximity gate, 0 otherwise.
    coll_percent: f64,
}

/// Scores `indices` of `dataset` with `predictor`, pooling accuracy
/// curves and the root-gated interpenetration percentage.
pub fn evaluate(
    dataset: &LoadedDataset,
    indices: &[usize],
    predictor: Predictor<'_>,
    thresholds_mm: &[f64],
) -> anyhow::Result<EvalReport> {
    if indices.is_empty() {
        return Err(validation_err("no windows to evaluate"));
    }
    let sensor = &dataset.manifest.sensor;
    let mut scores: Vec<WindowScores> = Vec::with_capacity(indices.len());
    for (done, &index) in indices.iter().enumerate() {
        let w = &dataset.windows[index];
        let (params, joints_left, joints_right): (Option<(HandParams, HandParams)>, _, _) =
            match &predictor {
                Predictor::Model(weights) => {
                    let pred = forward_full(
                        weights,
                        &w.cloud,
                        sensor.width,
                        sensor.height,
                        &dataset.assets_left,
                        &dataset.assets_right,
                    )?;
                    (Some((pred.left, pred.right)), pred.joints_left, pred.joints_right)
                }
                Predictor::ReplayGt => {
                    (Some((w.left, w.right)), w.joints_left.clone(), w.joints_right.clone())
                }
            };

        let mut r_errors = relative_errors_mm(&joints_left, &w.joints_left);
        r_errors.extend(relative_errors_mm(&joints_right, &w.joints_right));
        let rr_errors = relative_root_errors_mm(
            &joints_left,
            &joints_right,
            &w.joints_left,
            &w.joints_right,
        );

        // Gate on the reference roots; pose the predicted meshes only
        // for windows inside the gate.
        let roots = (w.joints_left[ROOT_JOINT], w.joints_right[ROOT_JOINT]);
        let coll_percent = if (roots.0 - roots.1).norm() < COLL_GATE_M {
            let (left, right) = params.expect("both predictor arms fill params");
            let posed_left = pose_mesh(&left, &dataset.assets_left);
            let posed_right = pose_mesh(&right, &dataset.assets_right);
            collision_percentage(
                &posed_left.vertices,
                &dataset.assets_left.faces,
                &posed_right.vertices,
                &dataset.assets_right.faces,
            )
        } else {
            0.0
        };

        scores.push(WindowScores { script: w.script, r_errors, rr_errors, roots, coll_percent });
        if (done + 1) % 2000 == 0 {
            eprintln!("evaluated {}/{} windows", done + 1, indices.len());
        }
    }

    let pooled_r: Vec<f64> = scores.iter().flat_map(|s| s.r_errors.iter().copied()).collect();
    let pooled_rr: Vec<f64> = scores.iter().flat_map(|s| s.rr_errors.iter().copied()).collect();
    let roots: Vec<(V3, V3)> = scores.iter().map(|s| s.roots).collect();
    let collision = gated_coll_percent(&roots, |i| scores[i].coll_percent);

    let mut sequences = Vec::new();
    for (si, entry) in dataset.manifest.scripts.iter().enumerate() {
        let members: Vec<&WindowScores> = scores.iter().filter(|s| s.script == si).collect();
        if members.is_empty() {
            continue;
        }
        let r: Vec<f64> = members.iter().flat_map(|s| s.r_errors.iter().copied()).collect();
        let rr: Vec<f64> = members.iter().flat_map(|s| s.rr_errors.iter().copied()).collect();
        let script_roots: Vec<(V3, V3)> = members.iter().map(|s| s.roots).collect();
        let script_coll = gated_coll_percent(&script_roots, |i| members[i].coll_percent);
        sequences.push(SequenceEval {
            name: entry.name.clone(),
            r_auc: auc(&pck_curve(&r, thresholds_mm)),
            rr_auc: auc(&pck_curve(&rr, thresholds_mm)),
            collision: script_coll,
            windows: members.len(),
        });
    }

    Ok(EvalReport::assemble(&pooled_r, &pooled_rr, collision, sequences, thresholds_mm))
}

/// JSON mirror of [`GatedCollision`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CollisionJson {
    /// Mean interpenetration percentage over qualifying windows.
    pub mean_percent: Option<f64>,
    /// Windows inside the proximity gate.
    pub qualifying: usize,
    /// Windows considered.
    pub total: usize,
}

impl From<GatedCollision> for CollisionJson {
    fn from(g: GatedCollision) -> Self {
        CollisionJson { mean_percent: g.mean_percent, qualifying: g.qualifying, total: g.total }
    }
}

/// JSON mirror of [`SequenceEval`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SequenceJson {
    /// Script name.
    pub name: String,
    /// Per-hand root-aligned AUC.
    pub r_auc: f64,
    /// Right-root-aligned AUC.
    pub rr_auc: f64,
    /// Gated interpenetration.
    pub collision: CollisionJson,
    /// Windows evaluated.
    pub windows: usize,
}

/// JSON mirror of [`EvalReport`] (curves live in the CSV files).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportJson {
    /// Pooled per-hand root-aligned AUC.
    pub r_auc: f64,
    /// Pooled right-root-aligned AUC.
    pub rr_auc: f64,
    /// Gated interpenetration over all evaluated windows.
    pub collision: CollisionJson,
    /// Windows evaluated.
    pub windows: usize,
    /// Per-script breakdown.
    pub sequences: Vec<SequenceJson>,
}

impl ReportJson {
    /// Flattens a report for serialization.
    pub fn from_report(report: &EvalReport) -> ReportJson {
        ReportJson {
            r_auc: report.r_auc,
            rr_auc: report.rr_auc,
            collision: report.collision.into(),
            windows: report.collision.total,
            sequences: report
                .sequences
                .iter()
                .map(|s| SequenceJson {
                    name: s.name.clone(),
                    r_auc: s.r_auc,
                    rr_auc: s.rr_auc,
                    collision: s.collision.into(),
                    windows: s.windows,
                })
                .collect(),
        }
    }
}

fn curve_csv(curve: &PckCurve) -> String {
    let mut out = String::from("threshold_mm,value\n");
    for (t, v) in curve.thresholds_mm.iter().zip(&curve.values) {
        out.push_str(&format!("{t},{v}\n"));
    }
    out
}

/// Writes `report.json`, `r_curve.csv` and `rr_curve.csv` into `out`.
pub fn write_report(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(&ReportJson::from_report(report))?;
    fs::write(out.join("report.json"), json + "\n")?;
    fs::write(out.join("r_curve.csv"), curve_csv(&report.r_curve))?;
    fs::write(out.join("rr_curve.csv"), curve_csv(&report.rr_curve))?;
    Ok(())
}

/// Runs the `eval` subcommand.
pub fn eval(
    common: &CommonArgs,
    data: &Path,
    checkpoint: Option<&Path>,
    split: SplitArg,
    replay_gt: bool,
) -> anyhow::Result<()> {
    let config = common.load_config(SeedStream::None)?;
    ensure_out_dir(&common.out)?;
    let dataset = load_dataset(data)?;
    let indices = dataset.indices(split.filter());
    if indices.is_empty() {
        return Err(validation_err(format!("split {split:?} holds no windows")));
    }
    let thresholds = config.eval.thresholds();

    let weights;
    let predictor = if replay_gt {
        Predictor::ReplayGt
    } else {
        let path = checkpoint
            .ok_or_else(|| validation_err("either --checkpoint or --replay-gt is required"))?;
        weights = load_checkpoint(path)?;
        Predictor::Model(&weights)
    };

    let report = evaluate(&dataset, &indices, predictor, &thresholds)?;
    write_report(&common.out, &report)?;
    println!(
        "evaluated {} windows: R-AUC {:.4}, RR-AUC {:.4}, Coll% {} ({}/{} gated)",
        indices.len(),
        report.r_auc,
        report.rr_auc,
        report
            .collision
            .mean_percent
            .map_or_else(|| String::from("n/a"), |p| format!("{p:.2}")),
        report.collision.qualifying,
        report.collision.total
    );
    Ok(())
}
