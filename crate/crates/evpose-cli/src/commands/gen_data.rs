//! `gen-data`: build a windowed, labeled dataset from the configured
//! scripts.

use crate::cli::{CommonArgs, SeedStream};
use crate::dataset::{build_dataset, Split};

/// Renders the configured scene scripts, simulates event streams and
/// writes the resampled window dataset into `--out`.
pub fn gen_data(common: &CommonArgs, force: bool) -> anyhow::Result<()> {
    let config = common.load_config(SeedStream::Data)?;
    let manifest = build_dataset(&config, &common.out, force)?;
    let train = manifest.windows.iter().filter(|w| w.split == Split::Train).count();
    let test = manifest.windows.len() - train;
    let events: u64 = manifest.scripts.iter().map(|s| s.events as u64).sum();
    println!(
        "wrote {} windows ({train} train, {test} test, {} empty skipped) from {} scripts, {events} events total",
        manifest.windows.len(),
        manifest.skipped_empty,
        manifest.scripts.len()
    );
    Ok(())
}
