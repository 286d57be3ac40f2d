//! The road-detection network: configuration, feature-space adaptation,
//! the two-stream model, and the training loop.

mod config;
mod fsa;
mod model;
mod train;

pub use config::{
    ConfigError, FusionMode, InputMode, LossWeights, StreamConfig, TrainConfig,
};
pub use fsa::{cascaded_fuse, FsaModule};
pub use model::{road_probability, ForwardOutputs, ForwardVars, ModelError, PlardModel};
pub use train::{
    predict, quantize_confidence, train, TrainError, TrainLog, TrainOutcome, TrainSample,
};
