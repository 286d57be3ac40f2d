use std::path::PathBuf;

use plard_core::pipeline::{read_dataset, run_ablation};

use crate::config::{load_json, require_dir, AblateConfig};
use crate::error::{io_at, CliResult};

#[derive(Debug, clap::Args)]
pub struct AblateArgs {
    /// Ablation configuration JSON (base training document + dataset paths).
    #[arg(long)]
    pub config: PathBuf,
}

pub fn run(args: &AblateArgs, seed_override: Option<u64>, verbose: bool) -> CliResult<()> {
    let mut config: AblateConfig = load_json(&args.config)?;
    if let Some(seed) = seed_override {
        config.train.seed = seed;
    }
    config.train.validate()?;
    require_dir(&config.train_dir, "training dataset")?;
    require_dir(&config.test_dir, "test dataset")?;
    std::fs::create_dir_all(&config.out_dir).map_err(io_at(&config.out_dir))?;

    let (train_bundles, _) = read_dataset(&config.train_dir)?;
    let (test_bundles, _) = read_dataset(&config.test_dir)?;

    let report = run_ablation(&config.train, &train_bundles, &test_bundles)?;
    let table = report.to_markdown();

    let md_path = config.out_dir.join("ablation.md");
    std::fs::write(&md_path, &table).map_err(io_at(&md_path))?;
    let json_path = config.out_dir.join("ablation.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_at(&json_path))?;

    if verbose {
        for r in &report.results {
            eprintln!(
                "{}: final train loss {:.6}",
                r.label, r.final_train_loss
            );
        }
    }
    print!("{table}");
    println!("wrote {} and {}", md_path.display(), json_path.display());
    Ok(())
}
