use std::path::PathBuf;

use plard_core::net::{train, PlardModel, TrainSample};
use plard_core::pipeline::{read_dataset, train_sample};

use crate::config::{load_json, require_dir, RunConfig};
use crate::error::{io_at, CliResult};

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Run configuration JSON (training document + dataset paths).
    #[arg(long)]
    pub config: PathBuf,
}

fn load_samples(
    dir: &std::path::Path,
    config: &plard_core::net::TrainConfig,
) -> CliResult<Vec<TrainSample>> {
    let (bundles, _) = read_dataset(dir)?;
    let mut samples = Vec::with_capacity(bundles.len());
    for bundle in &bundles {
        if bundle.image.height != config.input_height || bundle.image.width != config.input_width {
            return Err(crate::error::CliError::validation(format!(
                "dataset scene is {}x{} but the config expects {}x{}",
                bundle.image.width,
                bundle.image.height,
                config.input_width,
                config.input_height
            )));
        }
        samples.push(train_sample(bundle, config.input_mode, config.window)?);
    }
    Ok(samples)
}

pub fn run(args: &TrainArgs, seed_override: Option<u64>, verbose: bool) -> CliResult<()> {
    let mut run_config: RunConfig = load_json(&args.config)?;
    if let Some(seed) = seed_override {
        run_config.train.seed = seed;
    }
    run_config.train.validate()?;
    require_dir(&run_config.dataset_dir, "dataset")?;
    if let Some(val) = &run_config.val_dir {
        require_dir(val, "validation")?;
    }
    std::fs::create_dir_all(&run_config.out_dir).map_err(io_at(&run_config.out_dir))?;

    let samples = load_samples(&run_config.dataset_dir, &run_config.train)?;
    let val_samples = run_config
        .val_dir
        .as_ref()
        .map(|dir| load_samples(dir, &run_config.train))
        .transpose()?;

    let (model, mut store) = PlardModel::new(&run_config.train)?;
    let outcome = train(
        &model,
        &mut store,
        &samples,
        val_samples.as_deref(),
        &run_config.train,
    )?;

    let ckpt_path = run_config.out_dir.join("checkpoint.bin");
    std::fs::write(&ckpt_path, &outcome.best_checkpoint).map_err(io_at(&ckpt_path))?;
    let log_path = run_config.out_dir.join("train_log.json");
    std::fs::write(
        &log_path,
        serde_json::to_string_pretty(&outcome.log).expect("log serializes"),
    )
    .map_err(io_at(&log_path))?;

    if verbose {
        for (epoch, loss) in outcome.log.epoch_losses.iter().enumerate() {
            eprintln!("epoch {epoch}: loss {loss:.6}");
        }
    }
    println!(
        "trained {} epochs on {} scenes; final loss {:.6}; checkpoint {}",
        run_config.train.epochs,
        samples.len(),
        outcome.log.epoch_losses.last().unwrap(),
        ckpt_path.display()
    );
    Ok(())
}
