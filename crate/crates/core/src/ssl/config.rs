use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::{ConsistencyTerms, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// Pre-training only.
    Supervised,
    /// Pseudo-labels generated once from the pre-trained model.
    NaiveSsl,
    /// Validation-gated self-training with two-view consistency.
    Proposed,
    PiModel,
    TemporalEnsembling,
    MeanTeacher,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Supervised,
        StrategyKind::NaiveSsl,
        StrategyKind::Proposed,
        StrategyKind::PiModel,
        StrategyKind::TemporalEnsembling,
        StrategyKind::MeanTeacher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Supervised => "supervised",
            StrategyKind::NaiveSsl => "naive_ssl",
            StrategyKind::Proposed => "proposed",
            StrategyKind::PiModel => "pi_model",
            StrategyKind::TemporalEnsembling => "temporal_ensembling",
            StrategyKind::MeanTeacher => "mean_teacher",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

/// Hyperparameters shared by all strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    /// Triplet loss weight λ.
    pub lambda_triplet: f64,
    /// Consistency loss weight λ'.
    pub lambda_consistency: f64,
    pub margin: f64,
    /// `false` replaces the label-derived coefficient with the constant 1.
    pub adaptive_margin: bool,
    pub te_decay: f64,
    pub mt_decay: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_lr_decayed: f64,
    /// Pre-training epoch from which `pretrain_lr_decayed` applies.
    pub lr_decay_epoch: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
    pub weight_decay: f64,
    /// Whether pseudo-labeled samples take part in triplet mining.
    pub triplet_on_pseudo: bool,
    /// Seed the gate's best R/MSE from the pre-trained model instead of
    /// (0, ∞).
    pub warm_start_gate: bool,
    pub augment: AugmentConfig,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            lambda_triplet: 0.5,
            lambda_consistency: 1.0,
            margin: 0.5,
            adaptive_margin: true,
            te_decay: 0.6,
            mt_decay: 0.99,
            batch_size: 16,
            pretrain_epochs: 200,
            pretrain_lr: 1e-4,
            pretrain_lr_decayed: 1e-5,
            lr_decay_epoch: 100,
            finetune_epochs: 100,
            finetune_lr: 1e-5,
            weight_decay: 4e-4,
            triplet_on_pseudo: true,
            warm_start_gate: false,
            augment: AugmentConfig::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("lambda_triplet", self.lambda_triplet),
            ("lambda_consistency", self.lambda_consistency),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        for (name, v) in [("te_decay", self.te_decay), ("mt_decay", self.mt_decay)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        for (name, v) in [
            ("pretrain_lr", self.pretrain_lr),
            ("pretrain_lr_decayed", self.pretrain_lr_decayed),
            ("finetune_lr", self.finetune_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        self.augment.validate()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            triplet: self.lambda_triplet,
            consistency: self.lambda_consistency,
            margin: self.margin,
            adaptive: self.adaptive_margin,
            consistency_terms: ConsistencyTerms::Full,
        }
    }

    pub fn pretrain_lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_decay_epoch { self.pretrain_lr } else { self.pretrain_lr_decayed }
    }
}
