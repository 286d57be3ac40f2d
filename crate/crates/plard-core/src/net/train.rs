//! Seeded SGD training loop with polynomial learning-rate decay, momentum,
//! per-epoch loss logging and best-by-validation-MaxF checkpointing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Graph, ParameterStore, Tensor, TensorError};
use crate::eval::{Category, ConfidenceMap, RoadMask};

use super::config::TrainConfig;
use super::model::{road_probability, PlardModel};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NumericalFailure { epoch: usize, step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
}

/// One training example: network inputs plus supervision.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor,
    pub lidar: Option<Tensor>,
    /// One-hot target, channel 0 = non-road, channel 1 = road.
    pub target: Tensor,
    /// Optional pixel mask; 0 marks ignore pixels.
    pub mask: Option<Tensor>,
    pub gt: RoadMask,
    pub category: Category,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub val_maxf: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_maxf: Option<f64>,
}

pub struct TrainOutcome {
    pub log: TrainLog,
    /// Serialized checkpoint of the best epoch (by validation MaxF when a
    /// validation set is given, otherwise the final parameters).
    pub best_checkpoint: Vec<u8>,
}

/// Momentum SGD with optional weight decay over a parameter store.
struct Momentum {
    velocity: Vec<Vec<f64>>,
    momentum: f64,
    weight_decay: f64,
}

impl Momentum {
    fn new(store: &ParameterStore, momentum: f64, weight_decay: f64) -> Self {
        let velocity = (0..store.len())
            .map(|i| vec![0.0; store.value_by_index(i).numel()])
            .collect();
        Self {
            velocity,
            momentum,
            weight_decay,
        }
    }

    fn step(&mut self, store: &mut ParameterStore, lr: f64) {
        for i in 0..store.len() {
            let grad = store.grad_by_index(i).data.clone();
            let vel = &mut self.velocity[i];
            let value = store.value_by_index_mut(i);
            for (j, p) in value.data.iter_mut().enumerate() {
                let g = grad[j] + self.weight_decay * *p;
                vel[j] = self.momentum * vel[j] + g;
                *p -= lr * vel[j];
            }
        }
        store.zero_grads();
    }
}

/// Quantize a probability map to 8 bits, the way predictions hit the disk.
/// Evaluation always runs on quantized values so in-process and file-based
/// metrics agree exactly.
pub fn quantize_confidence(map: &ConfidenceMap) -> ConfidenceMap {
    ConfidenceMap {
        width: map.width,
        height: map.height,
        values: map
            .values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
            .collect(),
    }
}

/// Forward one sample and return its quantized road-probability map.
pub fn predict(
    model: &PlardModel,
    store: &ParameterStore,
    sample: &TrainSample,
) -> Result<ConfidenceMap, TensorError> {
    let out = model.forward(store, &sample.image, sample.lidar.as_ref())?;
    Ok(quantize_confidence(&road_probability(&out.parsing)))
}

/// Mean MaxF over a sample set at 256 thresholds.
fn validation_maxf(
    model: &PlardModel,
    store: &ParameterStore,
    samples: &[TrainSample],
) -> Result<f64, TrainError> {
    let mut acc = crate::eval::ConfusionAccumulator::new(256)?;
    for s in samples {
        let pred = predict(model, store, s)?;
        acc.accumulate(&pred, &s.gt)?;
    }
    Ok(acc.finalize()?.max_f)
}

/// Run the training loop. Deterministic per config seed; the RNG drives the
/// epoch shuffles and the optional brightness perturbations.
pub fn train(
    model: &PlardModel,
    store: &mut ParameterStore,
    dataset: &[TrainSample],
    validation: Option<&[TrainSample]>,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let total_steps = config.epochs * dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7261_1e5d));
    let mut optimizer = Momentum::new(store, config.momentum, config.weight_decay);

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut val_maxf = Vec::new();
    let mut best: Option<(usize, f64, Vec<u8>)> = None;
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for &idx in &order {
            let sample = &dataset[idx];
            let lr = config.learning_rate(step, total_steps);

            let mut g = Graph::new();
            let binding = g.bind_params(store);
            let image = if config.augment_brightness {
                let factor: f64 = rng.gen_range(0.7..1.3);
                let mut img = sample.image.clone();
                img.data.iter_mut().for_each(|v| *v = (*v * factor).clamp(0.0, 1.0));
                g.leaf(img)
            } else {
                g.leaf(sample.image.clone())
            };
            let lidar = sample.lidar.as_ref().map(|t| g.leaf(t.clone()));
            let outputs = model.forward_graph(&mut g, &binding, store, image, lidar)?;
            let target = g.leaf(sample.target.clone());
            let mask = sample.mask.as_ref().map(|t| g.leaf(t.clone()));
            let loss = model.total_loss_graph(&mut g, &outputs, target, mask, &config.loss_weights)?;

            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(TrainError::NumericalFailure { epoch, step });
            }
            epoch_loss += loss_value;

            g.backward(loss);
            g.extract_grads(&binding, store);
            optimizer.step(store, lr);
            step += 1;
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);

        if let Some(val) = validation {
            let maxf = validation_maxf(model, store, val)?;
            val_maxf.push(maxf);
            let improved = best.as_ref().map_or(true, |(_, b, _)| maxf > *b);
            if improved {
                best = Some((epoch, maxf, store.to_bytes()));
            }
        }
    }

    let (best_epoch, best_val, best_checkpoint) = match best {
        Some((e, m, bytes)) => (e, Some(m), bytes),
        None => (config.epochs.saturating_sub(1), None, store.to_bytes()),
    };

    Ok(TrainOutcome {
        log: TrainLog {
            epoch_losses,
            val_maxf,
            best_epoch,
            best_val_maxf: best_val,
        },
        best_checkpoint,
    })
}
