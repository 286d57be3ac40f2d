use std::path::PathBuf;

use plard_core::pipeline::write_dataset;
use plard_core::synth::{generate_dataset, DatasetOptions};

use crate::error::CliResult;

#[derive(Debug, clap::Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub count: usize,
    /// Lighting corruption level in [0, 1]; 0 is clean.
    #[arg(long, default_value_t = 0.0)]
    pub corruption: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 320)]
    pub width: usize,
    #[arg(long, default_value_t = 96)]
    pub height: usize,
}

pub fn run(args: &SynthArgs, seed: u64, verbose: bool) -> CliResult<()> {
    if args.count == 0 {
        return Err(crate::error::CliError::validation("count must be >= 1"));
    }
    let options = DatasetOptions {
        width: args.width,
        height: args.height,
        corruption_level: args.corruption,
    };
    let (bundles, manifest) = generate_dataset(args.count, seed, &options)?;
    write_dataset(&args.out, &bundles, &manifest)?;
    if verbose {
        for (bundle, meta) in bundles.iter().zip(&manifest.scenes) {
            eprintln!(
                "scene {} {} road fraction {:.3}",
                meta.id,
                meta.category.as_str(),
                bundle.gt.road_fraction()
            );
        }
    }
    println!(
        "wrote {} scenes ({}x{}, corruption {}) to {}",
        args.count,
        args.width,
        args.height,
        args.corruption,
        args.out.display()
    );
    Ok(())
}
