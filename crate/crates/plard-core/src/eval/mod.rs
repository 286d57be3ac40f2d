//! Road-detection evaluation: confusion sweep over confidence thresholds,
//! MaxF working point, average precision, per-category pooling, and an
//! optional birds-eye-view remapping before scoring.
//!
//! Thresholds sweep `[0, 1]` with "road iff confidence >= t". Pixel counts
//! accumulate exactly (integer confusion counts); metrics derive from pooled
//! counts, never from averaged per-scene metrics.

mod bev;

pub use bev::{ground_grid_homography, to_bev_confidence, to_bev_mask, BevMapping};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: prediction {pred_w}x{pred_h} vs ground truth {gt_w}x{gt_h}")]
    DimensionMismatch {
        pred_w: usize,
        pred_h: usize,
        gt_w: usize,
        gt_h: usize,
    },
    #[error("ground truth has no road pixels; recall is undefined")]
    NoPositives,
    #[error("no inputs to aggregate")]
    EmptyInput,
    #[error("homography is singular")]
    SingularHomography,
    #[error("threshold count {0} too small, need >= 2")]
    TooFewThresholds(usize),
}

/// Per-pixel ground-truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Road,
    NonRoad,
    Ignore,
}

/// Ground-truth road mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadMask {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<Label>,
}

impl RoadMask {
    pub fn filled(width: usize, height: usize, label: Label) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn road_fraction(&self) -> f64 {
        let road = self.labels.iter().filter(|&&l| l == Label::Road).count();
        let valid = self.labels.iter().filter(|&&l| l != Label::Ignore).count();
        if valid == 0 {
            0.0
        } else {
            road as f64 / valid as f64
        }
    }
}

/// Per-pixel road probability in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// KITTI-style scene category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    UM,
    UMM,
    UU,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::UM, Category::UMM, Category::UU];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::UM => "UM",
            Category::UMM => "UMM",
            Category::UU => "UU",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "UM" => Ok(Category::UM),
            "UMM" => Ok(Category::UMM),
            "UU" => Ok(Category::UU),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

/// Confusion counts per threshold; merges associatively across scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionAccumulator {
    pub thresholds: Vec<f64>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
}

impl ConfusionAccumulator {
    /// `count` thresholds evenly spaced over `[0, 1]`.
    pub fn new(count: usize) -> Result<Self, EvalError> {
        if count < 2 {
            return Err(EvalError::TooFewThresholds(count));
        }
        let thresholds = (0..count)
            .map(|i| i as f64 / (count - 1) as f64)
            .collect();
        Ok(Self {
            thresholds,
            tp: vec![0; count],
            fp: vec![0; count],
            fn_: vec![0; count],
            tn: vec![0; count],
        })
    }

    /// Add one scene. Ignore pixels do not count anywhere.
    pub fn accumulate(&mut self, pred: &ConfidenceMap, gt: &RoadMask) -> Result<(), EvalError> {
        if pred.width != gt.width || pred.height != gt.height {
            return Err(EvalError::DimensionMismatch {
                pred_w: pred.width,
                pred_h: pred.height,
                gt_w: gt.width,
                gt_h: gt.height,
            });
        }
        for (i, &t) in self.thresholds.iter().enumerate() {
            for (p, l) in pred.values.iter().zip(&gt.labels) {
                let predicted_road = *p >= t;
                match (l, predicted_road) {
                    (Label::Road, true) => self.tp[i] += 1,
                    (Label::Road, false) => self.fn_[i] += 1,
                    (Label::NonRoad, true) => self.fp[i] += 1,
                    (Label::NonRoad, false) => self.tn[i] += 1,
                    (Label::Ignore, _) => {}
                }
            }
        }
        Ok(())
    }

    /// Pool another accumulator's counts. Commutative and associative.
    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<(), EvalError> {
        if self.thresholds != other.thresholds {
            return Err(EvalError::DimensionMismatch {
                pred_w: self.thresholds.len(),
                pred_h: 0,
                gt_w: other.thresholds.len(),
                gt_h: 0,
            });
        }
        for i in 0..self.thresholds.len() {
            self.tp[i] += other.tp[i];
            self.fp[i] += other.fp[i];
            self.fn_[i] += other.fn_[i];
            self.tn[i] += other.tn[i];
        }
        Ok(())
    }

    /// Derive the metric block from the pooled counts.
    pub fn finalize(&self) -> Result<MetricBlock, EvalError> {
        let road_pixels = self.tp[0] + self.fn_[0];
        if road_pixels == 0 {
            return Err(EvalError::NoPositives);
        }

        let n = self.thresholds.len();
        let mut precision = vec![0.0f64; n];
        let mut recall = vec![0.0f64; n];
        let mut f1 = vec![0.0f64; n];
        for i in 0..n {
            let tp = self.tp[i] as f64;
            let fp = self.fp[i] as f64;
            let fn_ = self.fn_[i] as f64;
            precision[i] = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            recall[i] = tp / (tp + fn_);
            f1[i] = if precision[i] + recall[i] > 0.0 {
                2.0 * precision[i] * recall[i] / (precision[i] + recall[i])
            } else {
                0.0
            };
        }

        // Working point: first threshold (lowest) achieving the max F1.
        let mut best = 0usize;
        for i in 1..n {
            if f1[i] > f1[best] {
                best = i;
            }
        }

        // 41-anchor interpolated average precision: at each recall anchor the
        // precision is the best achievable at recall >= anchor.
        let anchors = AP_ANCHORS;
        let mut ap_sum = 0.0;
        for k in 0..anchors {
            let r = k as f64 / (anchors - 1) as f64;
            let mut best_p = 0.0f64;
            for i in 0..n {
                if recall[i] >= r && precision[i] > best_p {
                    best_p = precision[i];
                }
            }
            ap_sum += best_p;
        }

        let fp_best = self.fp[best] as f64;
        let tn_best = self.tn[best] as f64;
        let fpr = if fp_best + tn_best > 0.0 {
            fp_best / (fp_best + tn_best)
        } else {
            0.0
        };

        Ok(MetricBlock {
            max_f: 100.0 * f1[best],
            ap: 100.0 * ap_sum / anchors as f64,
            pre: 100.0 * precision[best],
            rec: 100.0 * recall[best],
            fpr: 100.0 * fpr,
            fnr: 100.0 * (1.0 - recall[best]),
            threshold_at_maxf: self.thresholds[best],
        })
    }
}

/// Number of recall anchors used for average precision.
pub const AP_ANCHORS: usize = 41;

/// The six benchmark metrics (percentages) plus the MaxF working point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub max_f: f64,
    pub ap: f64,
    pub pre: f64,
    pub rec: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub threshold_at_maxf: f64,
}

/// Full evaluation report: pooled overall metrics plus per-category blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    pub per_category: BTreeMap<Category, MetricBlock>,
    /// AP recall-anchor count, recorded because the sampling convention is
    /// ours rather than the benchmark server's.
    pub ap_anchors: usize,
    pub scenes: usize,
}

/// Sweep a single prediction/ground-truth pair.
pub fn compute_metrics(
    pred: &ConfidenceMap,
    gt: &RoadMask,
    thresholds: usize,
) -> Result<MetricBlock, EvalError> {
    let mut acc = ConfusionAccumulator::new(thresholds)?;
    acc.accumulate(pred, gt)?;
    acc.finalize()
}

/// Pool per-scene accumulators into category and overall metrics.
/// Counts pool before metrics derive, so scene order cannot matter.
pub fn aggregate(
    scenes: &[(Category, ConfusionAccumulator)],
) -> Result<EvalReport, EvalError> {
    let Some(first) = scenes.first() else {
        return Err(EvalError::EmptyInput);
    };
    let n = first.1.thresholds.len();
    let mut overall = ConfusionAccumulator::new(n)?;
    let mut by_cat: BTreeMap<Category, ConfusionAccumulator> = BTreeMap::new();
    for (cat, acc) in scenes {
        overall.merge(acc)?;
        by_cat
            .entry(*cat)
            .or_insert(ConfusionAccumulator::new(n)?)
            .merge(acc)?;
    }
    let mut per_category = BTreeMap::new();
    for (cat, acc) in &by_cat {
        per_category.insert(*cat, acc.finalize()?);
    }
    Ok(EvalReport {
        overall: overall.finalize()?,
        per_category,
        ap_anchors: AP_ANCHORS,
        scenes: scenes.len(),
    })
}

/// Color conventions for ground-truth PNGs. Pixels matching neither color
/// decode as [`Label::Ignore`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtColorMap {
    pub road: [u8; 3],
    pub non_road: [u8; 3],
}

impl Default for GtColorMap {
    /// KITTI convention: road is pink, valid non-road is red.
    fn default() -> Self {
        Self {
            road: [255, 0, 255],
            non_road: [255, 0, 0],
        }
    }
}

impl GtColorMap {
    pub fn decode(&self, rgb: [u8; 3]) -> Label {
        if rgb == self.road {
            Label::Road
        } else if rgb == self.non_road {
            Label::NonRoad
        } else {
            Label::Ignore
        }
    }

    pub fn encode(&self, label: Label) -> [u8; 3] {
        match label {
            Label::Road => self.road,
            Label::NonRoad => self.non_road,
            Label::Ignore => [0, 0, 0],
        }
    }
}

/// Decode a ground-truth mask from RGB bytes (row-major, 3 bytes per pixel).
pub fn mask_from_rgb(
    width: usize,
    height: usize,
    rgb: &[u8],
    colors: &GtColorMap,
) -> RoadMask {
    let labels = rgb
        .chunks_exact(3)
        .map(|px| colors.decode([px[0], px[1], px[2]]))
        .collect();
    RoadMask {
        width,
        height,
        labels,
    }
}

/// Encode a mask as RGB bytes using the color map.
pub fn mask_to_rgb(mask: &RoadMask, colors: &GtColorMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(mask.labels.len() * 3);
    for l in &mask.labels {
        out.extend_from_slice(&colors.encode(*l));
    }
    out
}
