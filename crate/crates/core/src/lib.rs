//! Semi-supervised regression from images.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffnet`]: a compact convolutional regressor with exact reverse-mode
//!   gradients, an Adam optimizer and a binary checkpoint format.
//! * [`losses`]: MSE, the adaptive (and fixed-margin) triplet loss, in-batch
//!   triplet mining, the two-view consistency loss and their combinations.
//! * [`metrics`]: Pearson R, RMSE and MSE over a split.
//! * [`data`]: a synthetic image-to-scalar generator, the augmentation
//!   pipeline and CSV/PGM manifests.
//! * [`ssl`]: supervised pre-training, the validation-gated self-training
//!   controller and the Π-model, temporal ensembling and mean teacher
//!   baselines.

pub mod data;
pub mod diffnet;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod seed;
pub mod ssl;

pub use data::{AugmentConfig, ImageTensor, Sample, SplitSpec, SynthConfig};
pub use diffnet::{AdamConfig, AdamState, ForwardOutput, Gradients, ModelParams, ModelSpec};
pub use error::{Error, Result};
pub use losses::{LossValue, Triplet};
pub use metrics::MetricsReport;
pub use ssl::{StrategyConfig, StrategyKind, TrainerState};
