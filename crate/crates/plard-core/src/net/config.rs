use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("stage channel {channels} at stage {stage} is not divisible by lidar divisor {divisor}")]
    ChannelsNotDivisible {
        stage: usize,
        channels: usize,
        divisor: usize,
    },
    #[error("input {side} {value} must be a positive multiple of 16")]
    BadInputSize { side: &'static str, value: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Which LiDAR representation feeds the second stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputMode {
    /// Rescaled altitude-difference image, one channel.
    #[serde(rename = "adt")]
    Adt,
    /// Direct-projection image (normalized x/y/z), three channels.
    #[serde(rename = "lproj")]
    LProj,
    /// No LiDAR stream at all; image-only baseline.
    #[serde(rename = "none")]
    ImageOnly,
}

impl InputMode {
    pub fn lidar_channels(&self) -> Option<usize> {
        match self {
            InputMode::Adt => Some(1),
            InputMode::LProj => Some(3),
            InputMode::ImageOnly => None,
        }
    }
}

/// How LiDAR features join the visual stream at stages 2-5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// No fusion (forced when there is no LiDAR stream).
    None,
    /// Plain channel concatenation of the raw LiDAR stage features.
    Concat,
    /// Learned per-element adaptation plus residual injection.
    Fsa,
}

/// Widths and dilations of the two five-stage streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// Visual-stream channels per stage; the LiDAR stream runs at
    /// `stage_channels[i] / lidar_divisor`.
    pub stage_channels: [usize; 5],
    pub lidar_divisor: usize,
    /// Uniform channel width used by the parsing head's context branch.
    pub fusion_channels: usize,
    /// Per-stage dilation of the LiDAR stream convolutions.
    pub dilation_schedule: [usize; 5],
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            stage_channels: [16, 32, 64, 128, 128],
            lidar_divisor: 8,
            fusion_channels: 32,
            dilation_schedule: [1, 1, 2, 2, 2],
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (stage, &c) in self.stage_channels.iter().enumerate() {
            if self.lidar_divisor == 0 || c % self.lidar_divisor != 0 {
                return Err(ConfigError::ChannelsNotDivisible {
                    stage: stage + 1,
                    channels: c,
                    divisor: self.lidar_divisor,
                });
            }
        }
        if self.fusion_channels == 0 {
            return Err(ConfigError::Invalid("fusion_channels must be > 0".into()));
        }
        if self.dilation_schedule.iter().any(|&d| d == 0) {
            return Err(ConfigError::Invalid("dilation must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lidar_channels_at(&self, stage: usize) -> usize {
        self.stage_channels[stage] / self.lidar_divisor
    }
}

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub parsing: f64,
    pub lidar: f64,
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            parsing: 1.0,
            lidar: 0.4,
            aux: 0.16,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parsing < 0.0 || self.lidar < 0.0 || self.aux < 0.0 {
            return Err(ConfigError::Invalid("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

fn default_epochs() -> usize {
    40
}
fn default_lr_start() -> f64 {
    1e-1
}
fn default_lr_end() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_lambda() -> f64 {
    0.1
}
fn default_poly_power() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_window() -> usize {
    7
}
fn default_input_height() -> usize {
    96
}
fn default_input_width() -> usize {
    320
}

/// Full training configuration; serializes as the JSON training document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr_start")]
    pub lr_start: f64,
    #[serde(default = "default_lr_end")]
    pub lr_end: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Residual fusion strength in the cascaded fusion.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stream: StreamConfig,
    pub input_mode: InputMode,
    /// Learned feature-space adaptation on (true) or plain concatenation
    /// fusion (false). Ignored when `input_mode` is `none`.
    #[serde(default = "default_true")]
    pub fsa: bool,
    /// Altitude-difference window used when building network inputs.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_input_height")]
    pub input_height: usize,
    #[serde(default = "default_input_width")]
    pub input_width: usize,
    /// Random brightness perturbation of training images.
    #[serde(default)]
    pub augment_brightness: bool,
    /// Exponent of the polynomial learning-rate decay.
    #[serde(default = "default_poly_power")]
    pub poly_power: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stream.validate()?;
        self.loss_weights.validate()?;
        for (side, value) in [
            ("height", self.input_height),
            ("width", self.input_width),
        ] {
            if value == 0 || value % 16 != 0 {
                return Err(ConfigError::BadInputSize { side, value });
            }
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be >= 1".into()));
        }
        if self.lr_start <= 0.0 || self.lr_end <= 0.0 {
            return Err(ConfigError::Invalid("learning rates must be > 0".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(ConfigError::Invalid(format!(
                "window {} must be odd and >= 3",
                self.window
            )));
        }
        Ok(())
    }

    pub fn fusion_mode(&self) -> FusionMode {
        match (self.input_mode, self.fsa) {
            (InputMode::ImageOnly, _) => FusionMode::None,
            (_, true) => FusionMode::Fsa,
            (_, false) => FusionMode::Concat,
        }
    }

    /// Polynomial decay between the endpoints over `total` steps.
    pub fn learning_rate(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.lr_start;
        }
        let progress = step as f64 / total as f64;
        self.lr_end + (self.lr_start - self.lr_end) * (1.0 - progress).powf(self.poly_power)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    #[test]
    fn default_stream_config_is_valid() {
        StreamConfig::default().validate().unwrap();
    }

    #[test]
    fn indivisible_channels_are_rejected() {
        let cfg = StreamConfig {
            stage_channels: [16, 30, 64, 128, 128],
            ..Default::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(ConfigError::ChannelsNotDivisible {
                stage: 2,
                channels: 30,
                divisor: 8
            })
        );
    }

    #[test]
    fn equal_lr_endpoints_give_constant_schedule() {
        let cfg = TrainConfig {
            lr_start: 1e-3,
            lr_end: 1e-3,
            input_mode: InputMode::Adt,
            ..test_config()
        };
        for step in [0, 10, 99] {
            assert!((cfg.learning_rate(step, 100) - 1e-3).abs() < 1e-18);
        }
    }

    #[test]
    fn schedule_hits_both_endpoints() {
        let cfg = TrainConfig {
            lr_start: 1e-4,
            lr_end: 1e-6,
            input_mode: InputMode::Adt,
            ..test_config()
        };
        assert!((cfg.learning_rate(0, 1000) - 1e-4).abs() < 1e-18);
        assert!((cfg.learning_rate(1000, 1000) - 1e-6).abs() < 1e-18);
        // Monotone decay in between.
        let mut prev = f64::INFINITY;
        for step in 0..=1000 {
            let lr = cfg.learning_rate(step, 1000);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn unknown_json_keys_are_rejected() {
        let json = r#"{"input_mode": "adt", "bogus_key": 1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
    }

    #[test]
    fn minimal_json_uses_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"input_mode": "lproj"}"#).unwrap();
        assert_eq!(cfg.input_mode, InputMode::LProj);
        assert_eq!(cfg.loss_weights, LossWeights::default());
        assert_eq!(cfg.lambda, 0.1);
        cfg.validate().unwrap();
    }

    pub(crate) fn test_config() -> TrainConfig {
        serde_json::from_str(r#"{"input_mode": "adt"}"#).unwrap()
    }
}
