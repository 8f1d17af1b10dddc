//! Hand-asset files.
//!
//! A hand's static model data — template, faces, blend bases, joint
//! regressor, skinning weights and kinematic tree — is stored as one
//! named-array container per hand, with a sibling `.txt` manifest
//! listing every array name and shape for human inspection. Integer
//! data (faces, parents) is stored as exactly-representable `f32`;
//! real-valued data is quantized to `f32`, so a saved asset is an
//! interchange copy, not a bit-exact twin of its in-memory source.
//! The pipeline therefore regenerates assets from their seed wherever
//! exact agreement matters and treats these files as an export.
//!
//! # Mapping external hand models
//!
//! [`convert_external_asset`] is the documented seam where a full
//! skinned-hand model distributed as `(v_template, faces, shapedirs,
//! hands_components, hands_mean, J_regressor, lbs_weights,
//! kintree_table)` would be translated into [`HandAssets`]:
//! `v_template` (meters) becomes `template`; `faces` maps directly;
//! the first [`SHAPE_COMPS`] columns of `shapedirs` become
//! `shape_basis`; the first [`POSE_COMPS`] rows of `hands_components`
//! transpose into `pose_basis` with `hands_mean` as `pose_mean`;
//! `J_regressor` rows become the sparse `joint_regressor` (plus
//! fingertip vertex picks for the five tip joints); `lbs_weights`
//! maps to `skinning`; and `kintree_table` yields `parents`. No such
//! loader is implemented — the function exists so the expected
//! contract is recorded in one place and callers get a clear error.

use crate::container::{read_arrays, write_arrays, ArraysFile, FormatError};
use evpose_core::hand::{
    HandAssets, Handedness, RegressorRow, FULL_POSE_DIMS, NUM_ARTICULATED, NUM_JOINTS, POSE_COMPS,
    SHAPE_COMPS,
};
use evpose_core::math::V3;
use evpose_core::net::NamedArray;
use std::path::Path;

const KIND: &str = "hand-assets";

fn array(name: &str, rows: usize, cols: usize, data: Vec<f32>) -> NamedArray {
    NamedArray { name: String::from(name), rows, cols, data }
}

fn v3_rows(points: &[V3]) -> Vec<f32> {
    points.iter().flat_map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect()
}

/// Writes one hand's assets plus its text manifest.
///
/// The manifest lives next to `path` with the extension replaced by
/// `.txt`.
pub fn save_assets(path: &Path, assets: &HandAssets) -> Result<(), FormatError> {
    let v = assets.template.len();
    let f = assets.faces.len();
    let handedness = match assets.handedness {
        Handedness::Left => "left",
        Handedness::Right => "right",
    };
    let mut shape = Vec::with_capacity(SHAPE_COMPS * v * 3);
    for comp in &assets.shape_basis {
        shape.extend(v3_rows(comp));
    }
    let mut regressor = vec![0.0f32; NUM_JOINTS * v];
    for (j, row) in assets.joint_regressor.iter().enumerate() {
        for (vertex, weight) in row {
            regressor[j * v + vertex] = *weight as f32;
        }
    }
    let file = ArraysFile {
        meta: vec![
            (String::from("kind"), String::from(KIND)),
            (String::from("handedness"), String::from(handedness)),
        ],
        arrays: vec![
            array("template", v, 3, v3_rows(&assets.template)),
            array(
                "faces",
                f,
                3,
                assets.faces.iter().flat_map(|t| t.map(|i| i as f32)).collect(),
            ),
            array("shape_basis", SHAPE_COMPS * v, 3, shape),
            array(
                "pose_basis",
                FULL_POSE_DIMS,
                POSE_COMPS,
                assets.pose_basis.iter().flat_map(|r| r.map(|x| x as f32)).collect(),
            ),
            array("pose_mean", 1, FULL_POSE_DIMS, assets.pose_mean.iter().map(|x| *x as f32).collect()),
            array("joint_regressor", NUM_JOINTS, v, regressor),
            array(
                "skinning",
                v,
                NUM_ARTICULATED,
                assets.skinning.iter().flat_map(|r| r.map(|x| x as f32)).collect(),
            ),
            array("parents", 1, NUM_JOINTS, assets.parents.iter().map(|p| *p as f32).collect()),
        ],
    };
    write_arrays(path, &file)?;
    let mut manifest = format!("kind {KIND}\nhandedness {handedness}\n");
    for a in &file.arrays {
        manifest.push_str(&format!("{} {}x{}\n", a.name, a.rows, a.cols));
    }
    let manifest_path = path.with_extension("txt");
    std::fs::write(&manifest_path, manifest)
        .map_err(|e| FormatError::Io { path: manifest_path.display().to_string(), source: e })
}

fn take<'a>(
    file: &'a ArraysFile,
    path: &Path,
    name: &str,
    cols: usize,
) -> Result<&'a NamedArray, FormatError> {
    let a = file.arrays.iter().find(|a| a.name == name).ok_or_else(|| FormatError::BadHeader {
        path: path.display().to_string(),
        line: format!("missing array {name}"),
    })?;
    if a.cols != cols || a.data.len() != a.rows * a.cols {
        return Err(FormatError::BadValue {
            path: path.display().to_string(),
            index: 0,
            message: format!("array {name} has shape {}x{}, expected {} columns", a.rows, a.cols, cols),
        });
    }
    Ok(a)
}

fn to_v3(data: &[f32]) -> Vec<V3> {
    data.chunks_exact(3)
        .map(|c| V3 { x: f64::from(c[0]), y: f64::from(c[1]), z: f64::from(c[2]) })
        .collect()
}

/// Reads a hand-asset file back.
///
/// Values come back `f32`-quantized; shapes and index ranges are fully
/// validated.
pub fn load_assets(path: &Path) -> Result<HandAssets, FormatError> {
    let p = || path.display().to_string();
    let bad = |message: String| FormatError::BadValue { path: p(), index: 0, message };
    let file = read_arrays(path)?;
    match file.meta("kind") {
        Some(KIND) => {}
        other => {
            return Err(FormatError::BadHeader {
                path: p(),
                line: format!("kind {}", other.unwrap_or("<missing>")),
            })
        }
    }
    let handedness = match file.meta("handedness") {
        Some("left") => Handedness::Left,
        Some("right") => Handedness::Right,
        other => {
            return Err(FormatError::BadHeader {
                path: p(),
                line: format!("handedness {}", other.unwrap_or("<missing>")),
            })
        }
    };
    let template = to_v3(&take(&file, path, "template", 3)?.data);
    let v = template.len();
    let faces_raw = take(&file, path, "faces", 3)?;
    let mut faces = Vec::with_capacity(faces_raw.rows);
    for (i, tri) in faces_raw.data.chunks_exact(3).enumerate() {
        let mut t = [0usize; 3];
        for (slot, value) in t.iter_mut().zip(tri) {
            if value.fract() != 0.0 || *value < 0.0 || *value >= v as f32 {
                return Err(bad(format!("face {i} refers to vertex {value}, have {v} vertices")));
            }
            *slot = *value as usize;
        }
        faces.push(t);
    }
    let shape_raw = take(&file, path, "shape_basis", 3)?;
    if shape_raw.rows != SHAPE_COMPS * v {
        return Err(bad(format!(
            "shape_basis has {} rows, expected {SHAPE_COMPS}x{v}",
            shape_raw.rows
        )));
    }
    let shape_flat = to_v3(&shape_raw.data);
    let shape_basis: Vec<Vec<V3>> = shape_flat.chunks_exact(v).map(|c| c.to_vec()).collect();
    let pose_raw = take(&file, path, "pose_basis", POSE_COMPS)?;
    if pose_raw.rows != FULL_POSE_DIMS {
        return Err(bad(format!("pose_basis has {} rows, expected {FULL_POSE_DIMS}", pose_raw.rows)));
    }
    let pose_basis: Vec<[f64; POSE_COMPS]> = pose_raw
        .data
        .chunks_exact(POSE_COMPS)
        .map(|c| {
            let mut row = [0.0; POSE_COMPS];
            for (slot, x) in row.iter_mut().zip(c) {
                *slot = f64::from(*x);
            }
            row
        })
        .collect();
    let mean_raw = take(&file, path, "pose_mean", FULL_POSE_DIMS)?;
    let pose_mean: Vec<f64> = mean_raw.data.iter().map(|x| f64::from(*x)).collect();
    let reg_raw = take(&file, path, "joint_regressor", v)?;
    if reg_raw.rows != NUM_JOINTS {
        return Err(bad(format!(
            "joint_regressor has {} rows, expected {NUM_JOINTS}",
            reg_raw.rows
        )));
    }
    let joint_regressor: Vec<RegressorRow> = reg_raw
        .data
        .chunks_exact(v)
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(vertex, w)| (vertex, f64::from(*w)))
                .collect()
        })
        .collect();
    let skin_raw = take(&file, path, "skinning", NUM_ARTICULATED)?;
    if skin_raw.rows != v {
        return Err(bad(format!("skinning has {} rows, expected {v}", skin_raw.rows)));
    }
    let skinning: Vec<[f64; NUM_ARTICULATED]> = skin_raw
        .data
        .chunks_exact(NUM_ARTICULATED)
        .map(|c| {
            let mut row = [0.0; NUM_ARTICULATED];
            for (slot, x) in row.iter_mut().zip(c) {
                *slot = f64::from(*x);
            }
            row
        })
        .collect();
    let parents_raw = take(&file, path, "parents", NUM_JOINTS)?;
    let mut parents = [0i32; NUM_JOINTS];
    for (i, (slot, value)) in parents.iter_mut().zip(&parents_raw.data).enumerate() {
        if value.fract() != 0.0 || *value < -1.0 || *value >= NUM_JOINTS as f32 {
            return Err(bad(format!("parent {i} is {value}, expected -1..{NUM_JOINTS}")));
        }
        *slot = *value as i32;
    }
    Ok(HandAssets {
        handedness,
        template,
        faces,
        shape_basis,
        pose_basis,
        pose_mean,
        joint_regressor,
        skinning,
        parents,
    })
}

/// Placeholder for loading externally distributed hand models.
///
/// See the module documentation for the intended field mapping. Always
/// fails: no external formats are wired up.
pub fn convert_external_asset(path: &Path) -> Result<HandAssets, FormatError> {
    Err(FormatError::BadHeader {
        path: path.display().to_string(),
        line: String::from("external hand-model conversion is documented but not implemented"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use evpose_core::hand::generate_toy_assets;

    #[test]
    fn assets_roundtrip_within_f32_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("right.bin");
        let assets = generate_toy_assets(7, Handedness::Right);
        save_assets(&path, &assets).unwrap();
        let back = load_assets(&path).unwrap();

        assert_eq!(back.handedness, assets.handedness);
        assert_eq!(back.faces, assets.faces);
        assert_eq!(back.parents, assets.parents);
        assert_eq!(back.template.len(), assets.template.len());
        for (a, b) in back.template.iter().zip(&assets.template) {
            assert!((*a - *b).norm() < 1e-6);
        }
        assert_eq!(back.joint_regressor.len(), NUM_JOINTS);
        for (a, b) in back.joint_regressor.iter().zip(&assets.joint_regressor) {
            assert_eq!(a.len(), b.len());
            for ((vi, wa), (vj, wb)) in a.iter().zip(b) {
                assert_eq!(vi, vj);
                assert!((wa - wb).abs() < 1e-6);
            }
        }
        for (a, b) in back.skinning.iter().zip(&assets.skinning) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-6);
            }
        }

        let manifest = std::fs::read_to_string(dir.path().join("right.txt")).unwrap();
        assert!(manifest.contains("handedness right"));
        assert!(manifest.contains(&format!("template {}x3", assets.template.len())));
        assert!(manifest.contains(&format!("faces {}x3", assets.faces.len())));
    }

    #[test]
    fn loaded_assets_pose_like_their_source() {
        use evpose_core::hand::{pose_mesh, HandParams};
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("left.bin");
        let assets = generate_toy_assets(3, Handedness::Left);
        save_assets(&path, &assets).unwrap();
        let back = load_assets(&path).unwrap();
        let mut params = HandParams::ZERO;
        params.theta[0] = 0.4;
        params.trans.z = 0.4;
        let a = pose_mesh(&params, &assets);
        let b = pose_mesh(&params, &back);
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert!((*x - *y).norm() < 1e-5, "{x:?} vs {y:?}");
        }
    }

    #[test]
    fn bad_face_indices_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("right.bin");
        let assets = generate_toy_assets(7, Handedness::Right);
        save_assets(&path, &assets).unwrap();
        let mut file = read_arrays(&path).unwrap();
        let faces = file.arrays.iter_mut().find(|a| a.name == "faces").unwrap();
        faces.data[0] = 1e6;
        write_arrays(&path, &file).unwrap();
        assert!(matches!(load_assets(&path), Err(FormatError::BadValue { .. })));
    }

    #[test]
    fn external_conversion_reports_unimplemented() {
        assert!(convert_external_asset(Path::new("mano.pkl")).is_err());
    }
}
