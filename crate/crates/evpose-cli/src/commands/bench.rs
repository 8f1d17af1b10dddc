//! `bench`: measure window-aggregation and forward-pass throughput.
//!
//! Stream synthesis is untimed preparation. The timed loop runs the
//! per-window pipeline — slice, aggregate, resample, normalize — over
//! every window of the take (empty ones included), reporting windows/s
//! and per-window p50/p95 latency. The network forward pass is timed
//! separately over a handful of non-empty windows, and skipped with a
//! note when the take produced no events. Results land in
//! `--out/bench.json`.

use super::ensure_out_dir;
use crate::cli::{CommonArgs, SeedStream};
use crate::config::truncate_script;
use crate::dataset::{simulate_script, window_seed};
use crate::exit::validation_err;
use evpose_core::event::{aggregate_window, normalize_cloud, resample_cloud, slice_stream, EventCloud};
use evpose_core::hand::{generate_toy_assets, Handedness};
use evpose_core::net::{forward_full, ModelWeights};
use serde::Serialize;
use std::fs;
use std::hint::black_box;
use std::time::Instant;

/// Timing of the per-window aggregation pipeline.
#[derive(Debug, Serialize)]
pub struct AggregationBench {
    /// Windows processed.
    pub windows: usize,
    /// Wall time of the timed loop in seconds.
    pub elapsed_s: f64,
    /// Windows per second.
    pub windows_per_s: f64,
    /// Median per-window latency in microseconds.
    pub p50_us: f64,
    /// 95th-percentile per-window latency in microseconds.
    pub p95_us: f64,
}

/// Timing of the network forward pass.
#[derive(Debug, Serialize)]
pub struct ForwardBench {
    /// Clouds timed.
    pub samples: usize,
    /// Median latency in milliseconds.
    pub p50_ms: f64,
    /// 95th-percentile latency in milliseconds.
    pub p95_ms: f64,
    /// Forward passes per second.
    pub per_s: f64,
}

/// The written benchmark summary.
#[derive(Debug, Serialize)]
pub struct BenchJson {
    /// Aggregation pipeline timing.
    pub aggregation: AggregationBench,
    /// Forward-pass timing; absent when no window held events.
    pub forward: Option<ForwardBench>,
    /// Explanation when a stage was skipped.
    pub note: Option<String>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = (sorted.len() - 1) as f64 * q;
    sorted[pos.round() as usize]
}

/// Runs the `bench` subcommand.
pub fn bench(common: &CommonArgs) -> anyhow::Result<()> {
    let config = common.load_config(SeedStream::Data)?;
    ensure_out_dir(&common.out)?;

    // Untimed preparation: render and simulate a take of the first
    // configured script.
    let scripts = config.scene_scripts()?;
    let mut script = scripts.into_iter().next().ok_or_else(|| {
        validation_err("no scripts configured")
    })?;
    truncate_script(&mut script, config.bench.take_us);
    println!("preparing {:?} take of {:.3} s", script.name, script.duration_us as f64 / 1e6);
    let (_frames, events, _labels) = simulate_script(&script, &config)?;
    println!("simulated {} events", events.len());

    let spec = config.windows.spec();
    let m = config.windows.resample_points as usize;
    let data_seed = config.seeds.data;

    // Timed loop: slice, aggregate, resample, normalize per window.
    let mut latencies = Vec::new();
    let mut checksum = 0.0f64;
    let loop_started = Instant::now();
    let mut index = 0u64;
    for window in slice_stream(&events, spec, 0, script.duration_us, true)? {
        let t0 = Instant::now();
        let cloud = aggregate_window(window.events, window.start_us, spec)?;
        let resampled = resample_cloud(&cloud, m, window_seed(data_seed, index))?;
        let rows = normalize_cloud(&resampled, config.sensor.width, config.sensor.height);
        checksum += black_box(rows.first().map_or(0.0, |r| r[0]) + rows.len() as f64);
        latencies.push(t0.elapsed().as_secs_f64() * 1e6);
        index += 1;
    }
    let elapsed = loop_started.elapsed().as_secs_f64();
    black_box(checksum);

    if latencies.is_empty() {
        return Err(validation_err("the take produced no windows; increase bench.take_us"));
    }
    latencies.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let aggregation = AggregationBench {
        windows: latencies.len(),
        elapsed_s: elapsed,
        windows_per_s: latencies.len() as f64 / elapsed,
        p50_us: percentile(&latencies, 0.50),
        p95_us: percentile(&latencies, 0.95),
    };
    println!(
        "aggregation: {} windows in {:.3} s = {:.0} windows/s (p50 {:.1} us, p95 {:.1} us)",
        aggregation.windows,
        aggregation.elapsed_s,
        aggregation.windows_per_s,
        aggregation.p50_us,
        aggregation.p95_us
    );

    // Forward pass over the first non-empty windows, prepared untimed.
    let mut clouds: Vec<EventCloud> = Vec::new();
    let mut index = 0u64;
    for window in slice_stream(&events, spec, 0, script.duration_us, false)? {
        if clouds.len() >= config.bench.forward_samples as usize {
            break;
        }
        let cloud = aggregate_window(window.events, window.start_us, spec)?;
        clouds.push(resample_cloud(&cloud, m, window_seed(data_seed, index))?);
        index += 1;
    }

    let (forward, note) = if clouds.is_empty() {
        let note = String::from("all windows empty; forward pass skipped");
        println!("{note}");
        (None, Some(note))
    } else {
        let weights = ModelWeights::init(config.model.to_core(), config.seeds.train);
        let assets_left = generate_toy_assets(config.seeds.assets, Handedness::Left);
        let assets_right = generate_toy_assets(config.seeds.assets, Handedness::Right);
        let warmup = forward_full(
            &weights,
            &clouds[0],
            config.sensor.width,
            config.sensor.height,
            &assets_left,
            &assets_right,
        );
        drop(warmup);
        let mut fwd_lat = Vec::with_capacity(clouds.len());
        let fwd_started = Instant::now();
        for cloud in &clouds {
            let t0 = Instant::now();
            let pred = forward_full(
                &weights,
                cloud,
                config.sensor.width,
                config.sensor.height,
                &assets_left,
                &assets_right,
            )?;
            black_box(pred.joints_left[0].x);
            fwd_lat.push(t0.elapsed().as_secs_f64() * 1e3);
        }
        let fwd_elapsed = fwd_started.elapsed().as_secs_f64();
        fwd_lat.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let forward = ForwardBench {
            samples: fwd_lat.len(),
            p50_ms: percentile(&fwd_lat, 0.50),
            p95_ms: percentile(&fwd_lat, 0.95),
            per_s: fwd_lat.len() as f64 / fwd_elapsed,
        };
        println!(
            "forward: {} clouds, p50 {:.2} ms, p95 {:.2} ms ({:.1}/s)",
            forward.samples, forward.p50_ms, forward.p95_ms, forward.per_s
        );
        (Some(forward), None)
    };

    let out = BenchJson { aggregation, forward, note };
    fs::write(common.out.join("bench.json"), serde_json::to_string_pretty(&out)? + "\n")?;
    Ok(())
}
