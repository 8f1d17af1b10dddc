//! Subcommand implementations.
//!
//! Each function takes the parsed arguments, performs the work and
//! writes its outputs under `--out`, returning an error classified for
//! the process exit code (validation 2, numeric abort 3).

mod bench;
mod eval;
mod gen_assets;
mod gen_data;
mod simulate;
mod train;

pub use bench::bench;
pub use eval::{eval, evaluate, write_report, Predictor};
pub use gen_assets::gen_assets;
pub use gen_data::gen_data;
pub use simulate::simulate;
pub use train::train;

use crate::exit::validation_err;
use std::fs;
use std::path::Path;

/// Creates `dir` (and parents) if missing; rejects a path that exists
/// but is not a directory.
pub(crate) fn ensure_out_dir(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() && !dir.is_dir() {
        return Err(validation_err(format!(
            "output path {} exists and is not a directory",
            dir.display()
        )));
    }
    fs::create_dir_all(dir)
        .map_err(|e| validation_err(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ensure_out_dir_creates_and_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let nested = dir.path().join("a/b");
        ensure_out_dir(&nested).unwrap();
        assert!(nested.is_dir());

        let file = dir.path().join("plain");
        std::fs::write(&file, b"x").unwrap();
        let err = ensure_out_dir(&file).unwrap_err();
        assert_eq!(crate::exit::exit_code(&err), crate::exit::EXIT_VALIDATION);
    }
}
