use super::engine::{run_epoch, EpochSetup, Target, TrainItem};
use super::{PredictionEma, StrategyConfig, StrategyKind, TrainLog, TrainerState};
use crate::data::{Sample, Splits};
use crate::diffnet::{AdamConfig, AdamState, ModelParams};
use crate::error::Result;
use crate::losses::{ConsistencyTerms, LossMode, LossWeights};
use crate::metrics::{evaluate, predict, MetricsReport};
use crate::seed::RunSeeds;
use crate::ssl::log::EpochRecord;

/// Output of one training stage: the selected (best validation R) model and
/// the stage history.
#[derive(Debug, Clone)]
pub struct StageResult {
    pub params: ModelParams<f32>,
    pub log: TrainLog,
    pub state: Option<TrainerState>,
    pub adam_steps: u64,
}

/// Tracks the evaluation with the highest defined validation R; ties keep
/// the earliest.
struct Selector {
    best: Option<(f64, usize, ModelParams<f32>)>,
}

impl Selector {
    fn consider(&mut self, index: usize, report: &MetricsReport, params: &ModelParams<f32>) {
        if let Some(r) = report.r_value {
            if self.best.as_ref().map_or(true, |(b, _, _)| r > *b) {
                self.best = Some((r, index, params.clone()));
            }
        }
    }
}

const FINETUNE_STAGE: &str = "finetune";

/// Runs `epochs` epochs, evaluating on `validation` before each one and
/// after the last. `step` trains one epoch and reports its mean loss and
/// whether pseudo-labels were regenerated.
fn run_stage<F>(
    start: &ModelParams<f32>,
    validation: &[Sample],
    epochs: usize,
    strategy: &str,
    mut step: F,
) -> Result<(ModelParams<f32>, TrainLog)>
where
    F: FnMut(usize, &mut ModelParams<f32>, &MetricsReport) -> Result<(f64, bool)>,
{
    let mut params = start.clone();
    let mut selector = Selector { best: None };
    let mut records = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let val = evaluate(&params, validation, "validation", epoch)?;
        selector.consider(epoch, &val, &params);
        let (train_loss, regenerated) = step(epoch, &mut params, &val)?;
        log::debug!(
            "{strategy} epoch {epoch}: loss {train_loss:.5}, val R {}, val rmse {:.5}{}",
            val.r_value.map_or("undefined".into(), |r| format!("{r:.4}")),
            val.rmse,
            if regenerated { ", pseudo-labels regenerated" } else { "" }
        );
        records.push(EpochRecord { epoch, train_loss, val, regenerated });
    }
    let final_val = evaluate(&params, validation, "validation", epochs)?;
    selector.consider(epochs, &final_val, &params);
    let (best_eval, best) = match selector.best {
        Some((_, idx, p)) => (idx, p),
        None => (epochs, params),
    };
    Ok((best, TrainLog { strategy: strategy.to_string(), records, final_val, best_eval }))
}

fn adam_for(params: &ModelParams<f32>, lr: f64, cfg: &StrategyConfig) -> AdamState<f32> {
    AdamState::new(params, AdamConfig { lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() })
}

fn labeled_items(labeled: &[Sample]) -> Vec<TrainItem<'_>> {
    labeled
        .iter()
        .map(|s| TrainItem { sample: s, target: Target::Label(s.label.expect("labeled split carries labels")) })
        .collect()
}

fn setup<'a>(
    stage: &'a str,
    epoch: usize,
    mode: LossMode,
    weights: LossWeights,
    cfg: &'a StrategyConfig,
    seeds: &RunSeeds,
) -> EpochSetup<'a> {
    EpochSetup {
        stage,
        epoch,
        mode,
        weights,
        batch_size: cfg.batch_size,
        augment: &cfg.augment,
        augment_seed: seeds.augment,
        mining_seed: seeds.mining,
        triplet_on_pseudo: cfg.triplet_on_pseudo,
    }
}

fn mse_only() -> LossWeights {
    LossWeights { triplet: 0.0, consistency: 0.0, ..LossWeights::default() }
}

/// Supervised pre-training with `L_mse + λ·L_triplet` and a step learning
/// rate schedule.
pub fn pretrain(
    init: &ModelParams<f32>,
    labeled: &[Sample],
    validation: &[Sample],
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    cfg.validate()?;
    let items = labeled_items(labeled);
    let mut adam = adam_for(init, cfg.pretrain_lr, cfg);
    let weights = LossWeights { consistency: 0.0, ..cfg.loss_weights() };
    let (params, log) = run_stage(init, validation, cfg.pretrain_epochs, "pretrain", |epoch, p, _| {
        adam.config.lr = cfg.pretrain_lr_at(epoch);
        let s = setup("pretrain", epoch, LossMode::Pretrain, weights, cfg, seeds);
        Ok((run_epoch(p, &mut adam, &items, &s, None)?.loss, false))
    })?;
    Ok(StageResult { params, log, state: None, adam_steps: adam.step_count() })
}

/// Continued supervised training on labeled data only, with the
/// fine-tuning learning rate.
pub fn supervised_finetune(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    cfg.validate()?;
    let items = labeled_items(&splits.train);
    let mut adam = adam_for(pretrained, cfg.finetune_lr, cfg);
    let weights = LossWeights { consistency: 0.0, ..cfg.loss_weights() };
    let (params, log) = run_stage(pretrained, &splits.validation, cfg.finetune_epochs, "supervised", |epoch, p, _| {
        let s = setup(FINETUNE_STAGE, epoch, LossMode::Pretrain, weights, cfg, seeds);
        Ok((run_epoch(p, &mut adam, &items, &s, None)?.loss, false))
    })?;
    Ok(StageResult { params, log, state: None, adam_steps: adam.step_count() })
}

/// When pseudo-labels are (re)generated during self-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GatePolicy {
    /// Whenever validation R rises and validation MSE falls, both strictly.
    ValidationGated,
    /// Once, unconditionally, before the first fine-tuning epoch.
    OnceAtStart,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTrainOptions {
    pub gate: GatePolicy,
    pub lambda_consistency: f64,
    pub strategy: StrategyKind,
}

fn regenerate(params: &ModelParams<f32>, unlabeled: &[Sample], state: &mut TrainerState) -> Result<()> {
    let preds = predict(params, unlabeled)?;
    state.pseudo_labels = unlabeled.iter().zip(preds).map(|(s, p)| (s.id.clone(), p)).collect();
    Ok(())
}

/// Validation-gated self-training with the full
/// `L_mse + λ·L_triplet + λ'·L_c` objective.
pub fn self_train(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    let opts = SelfTrainOptions {
        gate: GatePolicy::ValidationGated,
        lambda_consistency: cfg.lambda_consistency,
        strategy: StrategyKind::Proposed,
    };
    self_train_with(pretrained, splits, cfg, seeds, &opts)
}

/// Pseudo-labels generated once from the pre-trained model, no consistency.
pub fn naive_ssl(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    let opts = SelfTrainOptions { gate: GatePolicy::OnceAtStart, lambda_consistency: 0.0, strategy: StrategyKind::NaiveSsl };
    self_train_with(pretrained, splits, cfg, seeds, &opts)
}

pub fn self_train_with(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
    opts: &SelfTrainOptions,
) -> Result<StageResult> {
    cfg.validate()?;
    let epochs = cfg.finetune_epochs;
    let mut state = TrainerState::new(epochs);
    let mut adam = adam_for(pretrained, cfg.finetune_lr, cfg);
    let weights = LossWeights { consistency: opts.lambda_consistency, ..cfg.loss_weights() };
    let (params, log) = run_stage(pretrained, &splits.validation, epochs, opts.strategy.name(), |epoch, p, val| {
        state.epoch = epoch;
        if epoch == 0 && cfg.warm_start_gate && opts.gate == GatePolicy::ValidationGated {
            state.best_r = val.r_value.unwrap_or(0.0);
            state.best_mse = val.mse;
            regenerate(p, &splits.unlabeled, &mut state)?;
        }
        let regenerated = match opts.gate {
            GatePolicy::ValidationGated => state.observe(val.r_value, val.mse),
            GatePolicy::OnceAtStart => {
                if epoch == 0 {
                    state.regenerations.push(0);
                }
                epoch == 0
            }
        };
        if regenerated {
            regenerate(p, &splits.unlabeled, &mut state)?;
        }
        let mut items = labeled_items(&splits.train);
        items.extend(splits.unlabeled.iter().filter_map(|s| {
            state.pseudo_labels.get(&s.id).map(|&y| TrainItem { sample: s, target: Target::Pseudo(y) })
        }));
        let s = setup(FINETUNE_STAGE, epoch, LossMode::SelfTrain, weights, cfg, seeds);
        Ok((run_epoch(p, &mut adam, &items, &s, None)?.loss, regenerated))
    })?;
    state.epoch = epochs;
    Ok(StageResult { params, log, state: Some(state), adam_steps: adam.step_count() })
}

/// Π-model: MSE on labeled images plus λ'-weighted agreement between the
/// predictions on two views of every image.
pub fn pi_model(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut items = labeled_items(&splits.train);
    // unlabeled images carry no loss at all without the consistency term
    if cfg.lambda_consistency != 0.0 {
        items.extend(splits.unlabeled.iter().map(|s| TrainItem { sample: s, target: Target::None }));
    }
    let weights = LossWeights {
        triplet: 0.0,
        consistency: cfg.lambda_consistency,
        consistency_terms: ConsistencyTerms::PredictionOnly,
        ..cfg.loss_weights()
    };
    let mut adam = adam_for(pretrained, cfg.finetune_lr, cfg);
    let (params, log) = run_stage(pretrained, &splits.validation, cfg.finetune_epochs, "pi_model", |epoch, p, _| {
        let s = setup(FINETUNE_STAGE, epoch, LossMode::SelfTrain, weights, cfg, seeds);
        Ok((run_epoch(p, &mut adam, &items, &s, None)?.loss, false))
    })?;
    Ok(StageResult { params, log, state: None, adam_steps: adam.step_count() })
}

/// Temporal ensembling: unlabeled targets are the bias-corrected EMA of the
/// model's past training-time predictions, seeded with the pre-trained
/// model's predictions.
pub fn temporal_ensembling(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut ema = PredictionEma::new(cfg.te_decay);
    let initial = predict(pretrained, &splits.unlabeled)?;
    ema.update(splits.unlabeled.iter().map(|s| s.id.as_str()).zip(initial));
    let n_labeled = splits.train.len();
    let mut adam = adam_for(pretrained, cfg.finetune_lr, cfg);
    let (params, log) =
        run_stage(pretrained, &splits.validation, cfg.finetune_epochs, "temporal_ensembling", |epoch, p, _| {
            let mut items = labeled_items(&splits.train);
            items.extend(splits.unlabeled.iter().map(|s| TrainItem {
                sample: s,
                target: Target::Pseudo(ema.target(&s.id).expect("seeded for every unlabeled id")),
            }));
            let s = setup(FINETUNE_STAGE, epoch, LossMode::Pretrain, mse_only(), cfg, seeds);
            let out = run_epoch(p, &mut adam, &items, &s, None)?;
            let mut preds: Vec<(usize, f64)> = out.predictions.iter().copied().filter(|&(i, _)| i >= n_labeled).collect();
            preds.sort_by_key(|&(i, _)| i);
            ema.update(preds.into_iter().map(|(i, z)| (items[i].sample.id.as_str(), z)));
            Ok((out.loss, false))
        })?;
    Ok(StageResult { params, log, state: None, adam_steps: adam.step_count() })
}

/// Mean teacher: unlabeled targets are predictions of an EMA-of-weights
/// teacher on a second view; the student is returned.
pub fn mean_teacher(
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<StageResult> {
    cfg.validate()?;
    let mut teacher = pretrained.clone();
    let mut items = labeled_items(&splits.train);
    items.extend(splits.unlabeled.iter().map(|s| TrainItem { sample: s, target: Target::Teacher }));
    let decay = cfg.mt_decay as f32;
    let mut adam = adam_for(pretrained, cfg.finetune_lr, cfg);
    let (params, log) = run_stage(pretrained, &splits.validation, cfg.finetune_epochs, "mean_teacher", |epoch, p, _| {
        let s = setup(FINETUNE_STAGE, epoch, LossMode::Pretrain, mse_only(), cfg, seeds);
        Ok((run_epoch(p, &mut adam, &items, &s, Some((&mut teacher, decay)))?.loss, false))
    })?;
    Ok(StageResult { params, log, state: None, adam_steps: adam.step_count() })
}

/// Fine-tuning stage of `kind`; `None` for the purely supervised strategy.
pub fn finetune(
    kind: StrategyKind,
    pretrained: &ModelParams<f32>,
    splits: &Splits,
    cfg: &StrategyConfig,
    seeds: &RunSeeds,
) -> Result<Option<StageResult>> {
    Ok(Some(match kind {
        StrategyKind::Supervised => return Ok(None),
        StrategyKind::NaiveSsl => naive_ssl(pretrained, splits, cfg, seeds)?,
        StrategyKind::Proposed => self_train(pretrained, splits, cfg, seeds)?,
        StrategyKind::PiModel => pi_model(pretrained, splits, cfg, seeds)?,
        StrategyKind::TemporalEnsembling => temporal_ensembling(pretrained, splits, cfg, seeds)?,
        StrategyKind::MeanTeacher => mean_teacher(pretrained, splits, cfg, seeds)?,
    }))
}
