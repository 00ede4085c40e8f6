//! Training strategies.
//!
//! All strategies share one epoch engine ([`engine`]) and differ only in
//! which samples enter a batch, where their regression targets come from and
//! which loss terms are active:
//!
//! | strategy              | targets on unlabeled images             | extra terms          |
//! |-----------------------|-----------------------------------------|----------------------|
//! | supervised            | –                                       | triplet (λ)          |
//! | naive SSL             | pseudo-labels from the pre-trained model | triplet (λ)          |
//! | proposed              | pseudo-labels refreshed by the gate      | triplet (λ), consistency (λ') |
//! | Π-model               | –                                       | output consistency (λ') |
//! | temporal ensembling   | EMA of past predictions                 | –                    |
//! | mean teacher          | EMA-of-weights teacher predictions      | –                    |

mod checkpoint;
mod config;
mod ema;
mod engine;
mod gate;
mod log;
mod strategies;

pub use checkpoint::{load_checkpoint, save_checkpoint, AdamScalars, CheckpointMeta};
pub use config::{StrategyConfig, StrategyKind};
pub use ema::PredictionEma;
pub use engine::{run_epoch, EpochOutcome, EpochSetup, Target, TrainItem};
pub use gate::{replay_gate, TrainerState};
pub use log::{EpochRecord, TrainLog};
pub use strategies::{
    finetune, mean_teacher, naive_ssl, pi_model, pretrain, self_train, self_train_with, supervised_finetune,
    temporal_ensembling, GatePolicy, SelfTrainOptions, StageResult,
};
