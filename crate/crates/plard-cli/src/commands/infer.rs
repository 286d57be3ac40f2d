use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use plard_core::autodiff::ParameterStore;
use plard_core::imgio;
use plard_core::net::{predict, PlardModel, TrainConfig};
use plard_core::pipeline::{read_manifest, read_scene, train_sample};

use crate::error::{io_at, CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory with a manifest.json.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Output directory for per-scene road-probability PNGs.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Timing {
    scenes: usize,
    median_seconds: f64,
}

pub fn run(args: &InferArgs, threads: usize, verbose: bool) -> CliResult<()> {
    crate::config::require_file(&args.checkpoint, "checkpoint")?;
    crate::config::require_dir(&args.scenes, "scene")?;
    std::fs::create_dir_all(&args.out).map_err(io_at(&args.out))?;

    let store = ParameterStore::load(&args.checkpoint)?;
    let model = PlardModel::from_checkpoint(&store)?;
    let config: &TrainConfig = &model.config;
    let manifest = read_manifest(&args.scenes)?;

    // Deterministic output naming regardless of worker count.
    let worker_count = threads.max(1).min(manifest.scenes.len().max(1));
    let metas = &manifest.scenes;
    let mut timings: Vec<f64> = Vec::with_capacity(metas.len());
    let results: Vec<CliResult<f64>> = std::thread::scope(|scope| {
        let chunks: Vec<_> = metas.chunks(metas.len().div_ceil(worker_count)).collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|chunk| {
                let store = &store;
                let model = &model;
                scope.spawn(move || -> Vec<CliResult<f64>> {
                    chunk
                        .iter()
                        .map(|meta| -> CliResult<f64> {
                            let bundle = read_scene(&args.scenes, meta)?;
                            let sample =
                                train_sample(&bundle, config.input_mode, config.window)?;
                            let started = Instant::now();
                            let pred = predict(model, store, &sample)
                                .map_err(|e| CliError::validation(e.to_string()))?;
                            let elapsed = started.elapsed().as_secs_f64();
                            let bytes: Vec<u8> = pred
                                .values
                                .iter()
                                .map(|v| (v * 255.0).round() as u8)
                                .collect();
                            let png = imgio::encode_gray_png(pred.width, pred.height, &bytes)?;
                            let path = args.out.join(format!("{}.png", meta.id));
                            std::fs::write(&path, png).map_err(io_at(&path))?;
                            Ok(elapsed)
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    for r in results {
        timings.push(r?);
    }

    timings.sort_by(f64::total_cmp);
    let timing = Timing {
        scenes: timings.len(),
        median_seconds: timings[timings.len() / 2],
    };
    let timing_path = args.out.join("timing.json");
    std::fs::write(
        &timing_path,
        serde_json::to_string_pretty(&timing).expect("timing serializes"),
    )
    .map_err(io_at(&timing_path))?;

    if verbose {
        eprintln!("checkpoint config: {}", store.metadata);
    }
    println!(
        "inferred {} scenes, median {:.4} s/im, outputs in {}",
        timing.scenes,
        timing.median_seconds,
        args.out.display()
    );
    Ok(())
}
