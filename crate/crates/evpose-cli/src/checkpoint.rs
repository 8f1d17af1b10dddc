//! Weight checkpoints.
//!
//! A checkpoint is a named-array container whose text header carries
//! the layer sizes, the init seed and the completed step count; the
//! binary payload holds every trainable array in canonical order.
//! Loading rebuilds the weights through the network's own validation,
//! so a checkpoint that parses is guaranteed loadable and finite.

use crate::container::{read_arrays, write_arrays, ArraysFile, FormatError};
use evpose_core::net::{ModelConfig, ModelWeights};
use std::path::Path;

const KIND: &str = "checkpoint";

/// Writes a checkpoint file.
pub fn save_checkpoint(path: &Path, weights: &ModelWeights) -> Result<(), FormatError> {
    let c = &weights.config;
    let widths =
        c.backbone_widths.iter().map(|w| w.to_string()).collect::<Vec<String>>().join(",");
    let file = ArraysFile {
        meta: vec![
            (String::from("kind"), String::from(KIND)),
            (String::from("seed"), weights.seed.to_string()),
            (String::from("step"), weights.step.to_string()),
            (String::from("backbone_widths"), widths),
            (String::from("feature_width"), c.feature_width.to_string()),
            (String::from("branch_hidden"), c.branch_hidden.to_string()),
            (String::from("pointnet_width"), c.pointnet_width.to_string()),
            (String::from("head_hidden"), c.head_hidden.to_string()),
            (String::from("softmax_over_features"), c.softmax_over_features.to_string()),
        ],
        arrays: weights.arrays().to_vec(),
    };
    write_arrays(path, &file)
}

fn meta_parsed<T: core::str::FromStr>(
    file: &ArraysFile,
    path: &Path,
    key: &str,
) -> Result<T, FormatError> {
    let value = file.meta(key).ok_or_else(|| FormatError::BadHeader {
        path: path.display().to_string(),
        line: format!("missing meta {key}"),
    })?;
    value.parse().map_err(|_| FormatError::BadHeader {
        path: path.display().to_string(),
        line: format!("meta {key} {value}"),
    })
}

/// Reads a checkpoint file back into validated weights.
pub fn load_checkpoint(path: &Path) -> Result<ModelWeights, FormatError> {
    let file = read_arrays(path)?;
    let p = || path.display().to_string();
    match file.meta("kind") {
        Some(KIND) => {}
        other => {
            return Err(FormatError::BadHeader {
                path: p(),
                line: format!("kind {}", other.unwrap_or("<missing>")),
            })
        }
    }
    let widths_text = file.meta("backbone_widths").unwrap_or_default();
    let backbone_widths: Vec<usize> = if widths_text.is_empty() {
        Vec::new()
    } else {
        widths_text
            .split(',')
            .map(|w| w.parse())
            .collect::<Result<Vec<usize>, _>>()
            .map_err(|_| FormatError::BadHeader {
                path: p(),
                line: format!("meta backbone_widths {widths_text}"),
            })?
    };
    let config = ModelConfig {
        backbone_widths,
        feature_width: meta_parsed(&file, path, "feature_width")?,
        branch_hidden: meta_parsed(&file, path, "branch_hidden")?,
        pointnet_width: meta_parsed(&file, path, "pointnet_width")?,
        head_hidden: meta_parsed(&file, path, "head_hidden")?,
        softmax_over_features: meta_parsed(&file, path, "softmax_over_features")?,
    };
    let seed = meta_parsed(&file, path, "seed")?;
    let step = meta_parsed(&file, path, "step")?;
    ModelWeights::from_parts(config, seed, step, file.arrays).map_err(|e| FormatError::BadValue {
        path: p(),
        index: 0,
        message: format!("checkpoint arrays rejected: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            backbone_widths: vec![8],
            feature_width: 16,
            branch_hidden: 4,
            pointnet_width: 8,
            head_hidden: 8,
            softmax_over_features: true,
        }
    }

    #[test]
    fn checkpoint_roundtrips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        let mut weights = ModelWeights::init(tiny_config(), 99);
        weights.step = 1234;
        save_checkpoint(&path, &weights).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, weights);
        assert_eq!(back.seed, 99);
        assert_eq!(back.step, 1234);
    }

    #[test]
    fn empty_backbone_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        let mut config = tiny_config();
        config.backbone_widths.clear();
        let weights = ModelWeights::init(config, 3);
        save_checkpoint(&path, &weights).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), weights);
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.bin");
        save_checkpoint(&path, &ModelWeights::init(tiny_config(), 1)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Overwrite the first payload float with NaN; validation must
        // refuse the checkpoint rather than train on it.
        let data_at = bytes
            .windows(5)
            .position(|w| w == b"DATA\n")
            .map(|i| i + 5)
            .expect("DATA marker");
        bytes[data_at..data_at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(FormatError::BadValue { .. })));
    }
}
