use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TrainerState;
use crate::diffnet::{checkpoint, AdamConfig, ModelParams, ModelSpec};
use crate::error::{Error, Result};

/// Contents of the JSON sidecar written next to a binary checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub strategy: String,
    /// Optimizer hyperparameters and step count at save time.
    pub adam: Option<AdamScalars>,
    pub trainer: Option<TrainerState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamScalars {
    pub config: AdamConfig,
    pub step: u64,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` (binary parameters) and `path` with a `.json` extension.
pub fn save_checkpoint(path: &Path, params: &ModelParams<f32>, meta: &CheckpointMeta) -> Result<()> {
    checkpoint::save(path, params)?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, CheckpointMeta)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint { path: side.clone(), reason: e.to_string() })?;
    let params = checkpoint::load(path, &meta.spec)?;
    Ok((params, meta))
}
