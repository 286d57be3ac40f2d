use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use plard_core::eval::BevMapping;
use plard_core::net::TrainConfig;

use crate::error::{io_at, CliError, CliResult};

/// Evaluation options shared by `eval` and the run configs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Warp predictions and ground truth to a birds-eye-view grid first.
    #[serde(default)]
    pub bev: Option<BevMapping>,
    #[serde(default = "default_thresholds")]
    pub thresholds: usize,
}

fn default_thresholds() -> usize {
    256
}

/// Run configuration for `train`: the training document plus dataset paths
/// and the output directory. Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset_dir: PathBuf,
    #[serde(default)]
    pub val_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalOptions,
}

/// Run configuration for `ablate`: base training document plus the train and
/// test dataset paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub train_dir: PathBuf,
    pub test_dir: PathBuf,
    pub out_dir: PathBuf,
}

pub fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))
}

pub fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_dir() {
        return Err(CliError::io(format!(
            "{what} directory not found: {}",
            path.display()
        )));
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::io(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}
