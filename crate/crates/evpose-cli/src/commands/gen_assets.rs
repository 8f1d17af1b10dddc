//! `gen-assets`: write the procedural hand-asset files.

use super::ensure_out_dir;
use crate::assets::save_assets;
use crate::cli::{CommonArgs, SeedStream};
use evpose_core::hand::{generate_toy_assets, Handedness};

/// Generates left/right hand assets from the asset seed and writes
/// `left.bin`/`right.bin` (plus text manifests) into `--out`.
pub fn gen_assets(common: &CommonArgs) -> anyhow::Result<()> {
    let config = common.load_config(SeedStream::Assets)?;
    ensure_out_dir(&common.out)?;
    let seed = config.seeds.assets;
    for (handedness, name) in [(Handedness::Left, "left"), (Handedness::Right, "right")] {
        let assets = generate_toy_assets(seed, handedness);
        let path = common.out.join(format!("{name}.bin"));
        save_assets(&path, &assets)?;
        println!(
            "wrote {} ({} vertices, {} faces, seed {seed})",
            path.display(),
            assets.template.len(),
            assets.faces.len()
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_both_hands_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let common = CommonArgs {
            config: None,
            seed: Some(11),
            out: dir.path().to_path_buf(),
        };
        gen_assets(&common).unwrap();
        for name in ["left", "right"] {
            let loaded = crate::assets::load_assets(&dir.path().join(format!("{name}.bin"))).unwrap();
            let expected = generate_toy_assets(
                11,
                if name == "left" { Handedness::Left } else { Handedness::Right },
            );
            assert_eq!(loaded.template.len(), expected.template.len());
            assert!(dir.path().join(format!("{name}.txt")).is_file());
        }
    }
}
