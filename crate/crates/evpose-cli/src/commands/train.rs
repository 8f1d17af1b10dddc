//! `train`: optimize the network on a dataset's training split.
//!
//! Outputs under `--out`: `config.json` (the resolved run
//! configuration), `train.csv` (loss trace in `step,term,value` rows),
//! periodic `checkpoint-NNNNNN.bin` files, the final `checkpoint.bin`,
//! and the evaluation of the final weights on the test split
//! (`report.json` plus curve CSVs). Every output except the stdout
//! progress log is a pure function of dataset and configuration.

use super::ensure_out_dir;
use super::eval::{evaluate, write_report, Predictor};
use crate::checkpoint::save_checkpoint;
use crate::cli::{CommonArgs, SeedStream};
use crate::dataset::{load_dataset, window_seed, Split};
use crate::exit::{numeric_err, validation_err};
use evpose_core::loss::LossBreakdown;
use evpose_core::net::{train_step, AdamState, ModelWeights, TrainError, TrainSample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;
use std::time::Instant;

/// Stream tag separating the shuffle sequence from weight init, which
/// consumes the training seed directly.
const SHUFFLE_STREAM: u64 = 0x53_48_55_46; // "SHUF"

/// Cycles through a window index set, reshuffling at each epoch
/// boundary; batches may straddle epochs.
struct BatchFeeder {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchFeeder {
    fn new(indices: Vec<usize>, seed: u64) -> BatchFeeder {
        let mut feeder =
            BatchFeeder { order: indices, cursor: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        feeder.order.shuffle(&mut feeder.rng);
        feeder
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let index = self.order[self.cursor];
        self.cursor += 1;
        index
    }
}

fn push_log_rows(log: &mut String, step: u64, b: &LossBreakdown) {
    let terms = [
        ("joints", b.joints),
        ("mano", b.mano),
        ("seg", b.seg),
        ("interhand", b.interhand),
        ("isec", b.isec),
        ("reg", b.reg),
        ("supervised_rows", b.supervised_rows as f64),
        ("total", b.total),
    ];
    for (term, value) in terms {
        log.push_str(&format!("{step},{term},{value}\n"));
    }
}

/// Runs the `train` subcommand.
pub fn train(common: &CommonArgs, data: &Path) -> anyhow::Result<()> {
    let config = common.load_config(SeedStream::Train)?;
    ensure_out_dir(&common.out)?;
    let dataset = load_dataset(data)?;

    let train_indices = dataset.indices(Some(Split::Train));
    let test_indices = dataset.indices(Some(Split::Test));
    let batch_size = config.train.batch_size as usize;
    if train_indices.len() < batch_size {
        return Err(validation_err(format!(
            "training split holds {} windows, fewer than the batch size {batch_size}",
            train_indices.len()
        )));
    }
    if test_indices.is_empty() {
        return Err(validation_err("dataset has no test windows to evaluate on"));
    }

    fs::write(common.out.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;

    let mut weights = ModelWeights::init(config.model.to_core(), config.seeds.train);
    let mut opt = AdamState::new(&weights);
    let train_config = config.train_config();
    let mut feeder =
        BatchFeeder::new(train_indices.clone(), window_seed(config.seeds.train, SHUFFLE_STREAM));

    let iterations = config.train.iterations;
    let log_every = config.train.log_every.max(1);
    let checkpoint_every = config.train.checkpoint_every;
    let mut log = String::from("step,term,value\n");
    let started = Instant::now();

    println!(
        "training {} iterations on {} windows (batch {batch_size}, lr {})",
        iterations,
        train_indices.len(),
        train_config.lr
    );
    for step in 1..=iterations {
        let batch: Vec<TrainSample> =
            (0..batch_size).map(|_| dataset.sample(feeder.next())).collect();
        let report = train_step(
            &mut weights,
            &mut opt,
            &batch,
            &dataset.assets_left,
            &dataset.assets_right,
            &train_config,
        )
        .map_err(|e| match e {
            TrainError::NonFinite { sample, report } => numeric_err(format!(
                "non-finite loss at step {step} (batch sample {sample}): {report:?}"
            )),
            other => anyhow::anyhow!("training step {step}: {other}"),
        })?;

        let logged = step == 1 || step % log_every == 0 || step == iterations;
        if logged {
            push_log_rows(&mut log, step, &report.breakdown);
            let elapsed = started.elapsed().as_secs_f64();
            println!(
                "step {step}/{iterations}: total {:.5} ({:.2} steps/s)",
                report.breakdown.total,
                step as f64 / elapsed.max(1e-9)
            );
        }
        if checkpoint_every > 0 && step % checkpoint_every == 0 && step != iterations {
            save_checkpoint(&common.out.join(format!("checkpoint-{step:06}.bin")), &weights)?;
        }
    }

    save_checkpoint(&common.out.join("checkpoint.bin"), &weights)?;
    fs::write(common.out.join("train.csv"), &log)?;

    let thresholds = config.eval.thresholds();
    let report = evaluate(&dataset, &test_indices, Predictor::Model(&weights), &thresholds)?;
    write_report(&common.out, &report)?;
    println!(
        "test split ({} windows): R-AUC {:.4}, RR-AUC {:.4}, Coll% {}",
        test_indices.len(),
        report.r_auc,
        report.rr_auc,
        report
            .collision
            .mean_percent
            .map_or_else(|| String::from("n/a"), |p| format!("{p:.2}"))
    );
    Ok(())
}
