use std::path::PathBuf;

use plard_core::eval::{
    aggregate, to_bev_confidence, to_bev_mask, ConfidenceMap, ConfusionAccumulator,
};
use plard_core::imgio;
use plard_core::pipeline::{read_manifest, read_scene};

use crate::config::EvalOptions;
use crate::error::{io_at, CliResult};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Directory of per-scene prediction PNGs named {id}.png.
    #[arg(long)]
    pub pred: PathBuf,
    /// Dataset directory holding the ground truth.
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional eval-options JSON (threshold count, BEV homography).
    #[arg(long)]
    pub options: Option<PathBuf>,
    /// Report JSON output path.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EvalArgs, verbose: bool) -> CliResult<()> {
    crate::config::require_dir(&args.pred, "prediction")?;
    crate::config::require_dir(&args.gt, "ground-truth")?;
    let options: EvalOptions = match &args.options {
        Some(path) => crate::config::load_json(path)?,
        None => EvalOptions::default(),
    };

    let manifest = read_manifest(&args.gt)?;
    let mut scenes = Vec::with_capacity(manifest.scenes.len());
    for meta in &manifest.scenes {
        let pred_path = args.pred.join(format!("{}.png", meta.id));
        let png = std::fs::read(&pred_path).map_err(io_at(&pred_path))?;
        let (w, h, gray) = imgio::decode_gray_png(&png)?;
        let mut pred = ConfidenceMap {
            width: w,
            height: h,
            values: gray.iter().map(|&v| v as f64 / 255.0).collect(),
        };
        let bundle = read_scene(&args.gt, meta)?;
        let mut gt = bundle.gt;
        if let Some(bev) = &options.bev {
            pred = to_bev_confidence(&pred, bev)?;
            gt = to_bev_mask(&gt, bev)?;
        }
        let mut acc = ConfusionAccumulator::new(options.thresholds)?;
        acc.accumulate(&pred, &gt)?;
        scenes.push((meta.category, acc));
    }

    let report = aggregate(&scenes)?;
    std::fs::write(
        &args.out,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(io_at(&args.out))?;

    if verbose {
        for (cat, block) in &report.per_category {
            eprintln!("{}: MaxF {:.2} AP {:.2}", cat.as_str(), block.max_f, block.ap);
        }
    }
    println!(
        "MaxF {:.2} AP {:.2} PRE {:.2} REC {:.2} FPR {:.2} FNR {:.2} ({} scenes) -> {}",
        report.overall.max_f,
        report.overall.ap,
        report.overall.pre,
        report.overall.rec,
        report.overall.fpr,
        report.overall.fnr,
        report.scenes,
        args.out.display()
    );
    Ok(())
}
