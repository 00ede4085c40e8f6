use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssreg_core::{Error, ModelSpec, Result, SplitSpec, StrategyConfig, StrategyKind, SynthConfig};

/// Everything an experiment needs, read from one TOML file. Missing keys
/// take their defaults; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Master seeds. `train` and `generate` use the first unless `--seed`
    /// is given; `ablate` runs every cell once per seed.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Dataset tree written by `generate` and read by `train`.
    pub data_dir: PathBuf,
    /// Strategy run by `train` after pre-training.
    pub strategy: StrategyKind,
    pub split: SplitSpec,
    pub synth: SynthConfig,
    pub model: ModelSpec,
    pub train: StrategyConfig,
    pub ablation: AblationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs"),
            data_dir: PathBuf::from("data"),
            strategy: StrategyKind::Proposed,
            split: SplitSpec::default(),
            synth: SynthConfig::default(),
            model: ModelSpec::default(),
            train: StrategyConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Margin grid of the fixed-vs-adaptive triplet table.
    pub margins: Vec<f64>,
    /// Run the triplet-loss table.
    pub triplet_table: bool,
    /// Run the semi-supervised component table.
    pub component_table: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { margins: vec![0.1, 0.3, 0.5, 0.7, 1.0], triplet_table: true, component_table: true }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed must be configured".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config(format!("duplicate seeds in {:?}", self.seeds)));
        }
        self.split.validate()?;
        self.synth.validate()?;
        self.model.validate()?;
        if self.model.input_height != self.synth.image_size || self.model.input_width != self.synth.image_size {
            return Err(Error::Config(format!(
                "model input {}x{} does not match synthetic image size {}",
                self.model.input_height, self.model.input_width, self.synth.image_size
            )));
        }
        self.train.validate()?;
        if let Some(m) = self.ablation.margins.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::Config(format!("ablation margins must be > 0, got {m}")));
        }
        if self.ablation.triplet_table && self.ablation.margins.is_empty() {
            return Err(Error::Config("the triplet table needs at least one margin".into()));
        }
        Ok(())
    }

    /// The fully resolved configuration, as written next to every output.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
