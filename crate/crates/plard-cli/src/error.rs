use std::fmt;

use plard_core::adt::AdtError;
use plard_core::autodiff::TensorError;
use plard_core::eval::EvalError;
use plard_core::imgio::ImageIoError;
use plard_core::lidar_io::LidarIoError;
use plard_core::net::{ConfigError, ModelError, TrainError};
use plard_core::pipeline::PipelineError;
use plard_core::synth::SynthError;

/// Failure classes mapped onto process exit codes:
/// 1 validation, 2 I/O (including unparseable input files), 3 numerical.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Validation => 1,
            ErrorKind::Io => 2,
            ErrorKind::Numerical => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Validation,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Io,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("{}: {e}", path.display()))
}

impl From<LidarIoError> for CliError {
    fn from(e: LidarIoError) -> Self {
        CliError::io(format!("MissingKey/IO: {e}"))
    }
}

impl From<ImageIoError> for CliError {
    fn from(e: ImageIoError) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<AdtError> for CliError {
    fn from(e: AdtError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::validation(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NumericalFailure { .. } => CliError {
                kind: ErrorKind::Numerical,
                message: e.to_string(),
            },
            TrainError::Tensor(inner) => inner.into(),
            other => CliError::validation(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Io { .. } => CliError::io(e.to_string()),
            PipelineError::LidarIo(inner) => inner.into(),
            PipelineError::ImageIo(inner) => inner.into(),
            PipelineError::Train(inner) => inner.into(),
            PipelineError::Adt(inner) => inner.into(),
            PipelineError::Tensor(inner) => inner.into(),
            PipelineError::Eval(inner) => inner.into(),
            PipelineError::Synth(inner) => inner.into(),
            PipelineError::Model(inner) => inner.into(),
            PipelineError::Invalid(msg) => CliError::validation(msg),
        }
    }
}
