//! Glue between the modules: scene bundles to network inputs, the on-disk
//! dataset layout, and the four-variant ablation runner.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adt::{adt_transform, direct_projection, rasterize_altitude, AdtError, AdtImage};
use crate::autodiff::{Tensor, TensorError};
use crate::eval::{
    aggregate, ConfusionAccumulator, EvalError, EvalReport, GtColorMap, Label, MetricBlock,
    RoadMask,
};
use crate::imgio::{self, ImageIoError};
use crate::lidar_io::{self, LidarIoError};
use crate::net::{
    predict, train, InputMode, PlardModel, TrainConfig, TrainError, TrainOutcome, TrainSample,
};
use crate::synth::{Manifest, RgbData, SceneBundle, SceneMeta, SynthError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Adt(#[from] AdtError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    LidarIo(#[from] LidarIoError),
    #[error(transparent)]
    ImageIo(#[from] ImageIoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] crate::net::ModelError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// RGB bytes to a `1x3xHxW` tensor in `[0, 1]`.
pub fn image_to_tensor(image: &RgbData) -> Tensor {
    let (w, h) = (image.width, image.height);
    let mut data = vec![0.0f64; 3 * w * h];
    for p in 0..w * h {
        for c in 0..3 {
            data[c * w * h + p] = image.pixels[p * 3 + c] as f64 / 255.0;
        }
    }
    Tensor::from_vec([1, 3, h, w], data).expect("sized buffer")
}

/// Rescaled altitude-difference image to a `1x1xHxW` tensor in `[0, 1]`.
pub fn adt_to_tensor(adt: &AdtImage) -> Tensor {
    let data = adt.rescaled.iter().map(|&v| v as f64 / 255.0).collect();
    Tensor::from_vec([1, 1, adt.height, adt.width], data).expect("sized buffer")
}

/// Build the LiDAR-side network input for a scene.
pub fn lidar_input(
    bundle: &SceneBundle,
    mode: InputMode,
    window: usize,
) -> Result<Option<Tensor>, PipelineError> {
    let (w, h) = (bundle.image.width, bundle.image.height);
    match mode {
        InputMode::ImageOnly => Ok(None),
        InputMode::Adt => {
            let projected = lidar_io::project(&bundle.cloud, &bundle.calib, w, h);
            let map = rasterize_altitude(&projected, w, h)?;
            let adt = adt_transform(&map, window)?;
            Ok(Some(adt_to_tensor(&adt)))
        }
        InputMode::LProj => {
            let projected = lidar_io::project(&bundle.cloud, &bundle.calib, w, h);
            let proj = direct_projection(&projected, &bundle.cloud, w, h)?;
            let mut data = vec![0.0f64; 3 * w * h];
            for c in 0..3 {
                data[c * w * h..(c + 1) * w * h].copy_from_slice(&proj.channels[c]);
            }
            Ok(Some(Tensor::from_vec([1, 3, h, w], data)?))
        }
    }
}

/// One-hot target (channel 0 non-road, channel 1 road) and the ignore mask.
pub fn target_from_mask(gt: &RoadMask) -> (Tensor, Option<Tensor>) {
    let (w, h) = (gt.width, gt.height);
    let plane = w * h;
    let mut target = Tensor::zeros([1, 2, h, w]);
    let mut mask = vec![1.0f64; plane];
    let mut any_ignore = false;
    for (i, label) in gt.labels.iter().enumerate() {
        match label {
            Label::Road => target.data[plane + i] = 1.0,
            Label::NonRoad => target.data[i] = 1.0,
            Label::Ignore => {
                mask[i] = 0.0;
                any_ignore = true;
            }
        }
    }
    let mask = any_ignore.then(|| Tensor::from_vec([1, 1, h, w], mask).expect("sized"));
    (target, mask)
}

/// Assemble a training sample from a scene bundle.
pub fn train_sample(
    bundle: &SceneBundle,
    mode: InputMode,
    window: usize,
) -> Result<TrainSample, PipelineError> {
    let (target, mask) = target_from_mask(&bundle.gt);
    Ok(TrainSample {
        image: image_to_tensor(&bundle.image),
        lidar: lidar_input(bundle, mode, window)?,
        target,
        mask,
        gt: bundle.gt.clone(),
        category: bundle.category,
    })
}

// ---- on-disk dataset layout ------------------------------------------------

/// Write a dataset directory: numbered scene folders holding `image.png`,
/// `cloud.bin`, `calib.txt`, `gt.png` and `meta.json`, plus a root
/// `manifest.json`.
pub fn write_dataset(
    dir: &Path,
    bundles: &[SceneBundle],
    manifest: &Manifest,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let colors = GtColorMap::default();
    for (bundle, meta) in bundles.iter().zip(&manifest.scenes) {
        let scene_dir = dir.join(&meta.id);
        std::fs::create_dir_all(&scene_dir).map_err(io_err(&scene_dir))?;

        let image_png = imgio::encode_rgb_png(
            bundle.image.width,
            bundle.image.height,
            &bundle.image.pixels,
        )?;
        std::fs::write(scene_dir.join("image.png"), image_png)
            .map_err(io_err(&scene_dir))?;

        std::fs::write(
            scene_dir.join("cloud.bin"),
            lidar_io::write_point_cloud(&bundle.cloud),
        )
        .map_err(io_err(&scene_dir))?;

        std::fs::write(
            scene_dir.join("calib.txt"),
            lidar_io::write_calibration(&bundle.calib),
        )
        .map_err(io_err(&scene_dir))?;

        let gt_rgb = crate::eval::mask_to_rgb(&bundle.gt, &colors);
        let gt_png = imgio::encode_rgb_png(bundle.gt.width, bundle.gt.height, &gt_rgb)?;
        std::fs::write(scene_dir.join("gt.png"), gt_png).map_err(io_err(&scene_dir))?;

        let meta_json = serde_json::to_string_pretty(meta).expect("meta serializes");
        std::fs::write(scene_dir.join("meta.json"), meta_json)
            .map_err(io_err(&scene_dir))?;
    }
    let manifest_json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), manifest_json).map_err(io_err(dir))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, PipelineError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Invalid(format!("manifest {}: {e}", path.display())))
}

/// Read one scene folder back into a bundle.
pub fn read_scene(dir: &Path, meta: &SceneMeta) -> Result<SceneBundle, PipelineError> {
    let scene_dir = dir.join(&meta.id);

    let image_bytes =
        std::fs::read(scene_dir.join("image.png")).map_err(io_err(&scene_dir))?;
    let (w, h, pixels) = imgio::decode_rgb_png(&image_bytes)?;

    let cloud_bytes =
        std::fs::read(scene_dir.join("cloud.bin")).map_err(io_err(&scene_dir))?;
    let cloud = lidar_io::read_point_cloud(&cloud_bytes)?;

    let calib_text =
        std::fs::read_to_string(scene_dir.join("calib.txt")).map_err(io_err(&scene_dir))?;
    let calib = lidar_io::read_calibration(&calib_text)?;

    let gt_bytes = std::fs::read(scene_dir.join("gt.png")).map_err(io_err(&scene_dir))?;
    let (gw, gh, gt_rgb) = imgio::decode_rgb_png(&gt_bytes)?;
    let gt = crate::eval::mask_from_rgb(gw, gh, &gt_rgb, &GtColorMap::default());

    Ok(SceneBundle {
        image: RgbData {
            width: w,
            height: h,
            pixels,
        },
        cloud,
        calib,
        gt,
        category: meta.category,
    })
}

/// Load a whole dataset directory in manifest order.
pub fn read_dataset(dir: &Path) -> Result<(Vec<SceneBundle>, Manifest), PipelineError> {
    let manifest = read_manifest(dir)?;
    let bundles = manifest
        .scenes
        .iter()
        .map(|meta| read_scene(dir, meta))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((bundles, manifest))
}

// ---- ablation --------------------------------------------------------------

/// The four input/fusion variants in benchmark-table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Img,
    ImgLProj,
    ImgLAdt,
    ImgLAdtFsa,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Img,
        Variant::ImgLProj,
        Variant::ImgLAdt,
        Variant::ImgLAdtFsa,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Variant::Img => "Img",
            Variant::ImgLProj => "Img + L-Proj",
            Variant::ImgLAdt => "Img + L-ADT",
            Variant::ImgLAdtFsa => "Img + L-ADT + FSA",
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Img => {
                cfg.input_mode = InputMode::ImageOnly;
                cfg.fsa = false;
            }
            Variant::ImgLProj => {
                cfg.input_mode = InputMode::LProj;
                cfg.fsa = false;
            }
            Variant::ImgLAdt => {
                cfg.input_mode = InputMode::Adt;
                cfg.fsa = false;
            }
            Variant::ImgLAdtFsa => {
                cfg.input_mode = InputMode::Adt;
                cfg.fsa = true;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub label: String,
    pub metrics: MetricBlock,
    pub report: EvalReport,
    pub median_infer_seconds: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub results: Vec<VariantResult>,
}

impl AblationReport {
    pub fn maxf(&self, variant: Variant) -> f64 {
        self.results
            .iter()
            .find(|r| r.variant == variant)
            .map(|r| r.metrics.max_f)
            .expect("variant present")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| Variant | Speed (s/im) | MaxF | AP | PRE | REC | FPR | FNR |\n\
             |---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.results {
            out.push_str(&format!(
                "| {} | {:.3} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
                r.label,
                r.median_infer_seconds,
                r.metrics.max_f,
                r.metrics.ap,
                r.metrics.pre,
                r.metrics.rec,
                r.metrics.fpr,
                r.metrics.fnr,
            ));
        }
        out
    }
}

/// Train one variant on the bundles and score it on the test set.
/// Predictions are quantized to 8 bits before scoring, matching what the
/// file-based pipeline produces.
pub fn run_variant(
    variant: Variant,
    base: &TrainConfig,
    train_bundles: &[SceneBundle],
    test_bundles: &[SceneBundle],
) -> Result<VariantResult, PipelineError> {
    let cfg = variant.apply(base);
    cfg.validate()
        .map_err(|e| PipelineError::Invalid(e.to_string()))?;
    let (model, mut store) = PlardModel::new(&cfg)?;

    let train_set: Vec<TrainSample> = train_bundles
        .iter()
        .map(|b| train_sample(b, cfg.input_mode, cfg.window))
        .collect::<Result<_, _>>()?;
    let test_set: Vec<TrainSample> = test_bundles
        .iter()
        .map(|b| train_sample(b, cfg.input_mode, cfg.window))
        .collect::<Result<_, _>>()?;

    let outcome: TrainOutcome = train(&model, &mut store, &train_set, None, &cfg)?;

    let mut scenes = Vec::with_capacity(test_set.len());
    let mut timings = Vec::with_capacity(test_set.len());
    for sample in &test_set {
        let started = Instant::now();
        let pred = predict(&model, &store, sample)?;
        timings.push(started.elapsed().as_secs_f64());
        let mut acc = ConfusionAccumulator::new(256)?;
        acc.accumulate(&pred, &sample.gt)?;
        scenes.push((sample.category, acc));
    }
    let report = aggregate(&scenes)?;
    timings.sort_by(f64::total_cmp);
    let median = timings[timings.len() / 2];

    Ok(VariantResult {
        variant,
        label: variant.label().to_string(),
        metrics: report.overall.clone(),
        report,
        median_infer_seconds: median,
        final_train_loss: *outcome.log.epoch_losses.last().unwrap(),
    })
}

/// Train and evaluate all four variants on the same data.
pub fn run_ablation(
    base: &TrainConfig,
    train_bundles: &[SceneBundle],
    test_bundles: &[SceneBundle],
) -> Result<AblationReport, PipelineError> {
    let results = Variant::ALL
        .iter()
        .map(|v| run_variant(*v, base, train_bundles, test_bundles))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AblationReport { results })
}
