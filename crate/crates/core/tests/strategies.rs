//! Relations between the training strategies that hold by construction.

use ssreg_core::data::{generate_splits, Splits};
use ssreg_core::diffnet::forward;
use ssreg_core::losses::{total_loss, BatchItem, LossMode, LossWeights};
use ssreg_core::metrics::{evaluate, predict};
use ssreg_core::seed::RunSeeds;
use ssreg_core::ssl::{
    finetune, naive_ssl, pi_model, pretrain, self_train_with, supervised_finetune, GatePolicy, SelfTrainOptions,
};
use ssreg_core::{AugmentConfig, ModelParams, ModelSpec, SplitSpec, StrategyConfig, StrategyKind, SynthConfig};

fn tiny_splits(seeds: &RunSeeds, unlabeled: usize) -> Splits {
    let spec = SplitSpec { labeled: 12, unlabeled, validation: 8, test: 8 };
    generate_splits(&spec, seeds.data, &SynthConfig::default()).unwrap()
}

fn tiny_cfg() -> StrategyConfig {
    StrategyConfig {
        pretrain_epochs: 3,
        lr_decay_epoch: 2,
        finetune_epochs: 3,
        pretrain_lr: 1e-3,
        pretrain_lr_decayed: 1e-4,
        finetune_lr: 1e-3,
        batch_size: 5,
        ..StrategyConfig::default()
    }
}

fn start(seeds: &RunSeeds) -> ModelParams<f32> {
    ModelParams::init(&ModelSpec::default(), seeds.init).unwrap()
}

#[test]
fn naive_ssl_is_self_training_with_one_regeneration_and_no_consistency() {
    let seeds = RunSeeds::from_master(3);
    let splits = tiny_splits(&seeds, 10);
    let cfg = tiny_cfg();
    let init = start(&seeds);
    let naive = naive_ssl(&init, &splits, &cfg, &seeds).unwrap();
    let opts = SelfTrainOptions { gate: GatePolicy::OnceAtStart, lambda_consistency: 0.0, strategy: StrategyKind::NaiveSsl };
    let manual = self_train_with(&init, &splits, &cfg, &seeds, &opts).unwrap();
    assert_eq!(naive.params, manual.params);
    assert_eq!(naive.log.losses(), manual.log.losses());
    let state = naive.state.unwrap();
    assert_eq!(state.regenerations, vec![0]);
    // the table still holds the predictions of the starting model
    let expected = predict(&init, &splits.unlabeled).unwrap();
    for (s, y) in splits.unlabeled.iter().zip(expected) {
        assert_eq!(state.pseudo_labels[&s.id], y);
    }
}

#[test]
fn without_unlabeled_data_every_strategy_reduces_to_supervised_finetuning() {
    let seeds = RunSeeds::from_master(4);
    let splits = tiny_splits(&seeds, 0);
    let cfg = StrategyConfig { lambda_triplet: 0.0, lambda_consistency: 0.0, ..tiny_cfg() };
    let init = start(&seeds);
    let reference = supervised_finetune(&init, &splits, &cfg, &seeds).unwrap();
    for kind in [
        StrategyKind::NaiveSsl,
        StrategyKind::Proposed,
        StrategyKind::PiModel,
        StrategyKind::TemporalEnsembling,
        StrategyKind::MeanTeacher,
    ] {
        let run = finetune(kind, &init, &splits, &cfg, &seeds).unwrap().unwrap();
        assert_eq!(run.log.losses(), reference.log.losses(), "{kind:?}");
        assert_eq!(run.params, reference.params, "{kind:?}");
    }
}

#[test]
fn pi_model_without_consistency_ignores_unlabeled_images() {
    let seeds = RunSeeds::from_master(5);
    let splits = tiny_splits(&seeds, 10);
    let cfg = StrategyConfig { lambda_consistency: 0.0, lambda_triplet: 0.0, ..tiny_cfg() };
    let init = start(&seeds);
    let pi = pi_model(&init, &splits, &cfg, &seeds).unwrap();
    let sup = supervised_finetune(&init, &splits, &cfg, &seeds).unwrap();
    assert_eq!(pi.params, sup.params);
}

#[test]
fn zero_epochs_return_the_starting_model() {
    let seeds = RunSeeds::from_master(6);
    let splits = tiny_splits(&seeds, 6);
    let cfg = StrategyConfig { pretrain_epochs: 0, finetune_epochs: 0, lr_decay_epoch: 0, ..tiny_cfg() };
    let init = start(&seeds);
    let pre = pretrain(&init, &splits.train, &splits.validation, &cfg, &seeds).unwrap();
    assert_eq!(pre.params, init);
    assert!(pre.log.records.is_empty());
    for kind in StrategyKind::ALL {
        if let Some(run) = finetune(kind, &init, &splits, &cfg, &seeds).unwrap() {
            assert_eq!(run.params, init, "{kind:?}");
            assert_eq!(run.adam_steps, 0);
        }
    }
}

#[test]
fn single_batch_epoch_logs_the_batch_objective() {
    let seeds = RunSeeds::from_master(8);
    let spec = SplitSpec { labeled: 3, unlabeled: 0, validation: 4, test: 4 };
    let splits = generate_splits(&spec, seeds.data, &SynthConfig::default()).unwrap();
    let cfg = StrategyConfig {
        pretrain_epochs: 1,
        lr_decay_epoch: 1,
        augment: AugmentConfig::identity(),
        ..StrategyConfig::default()
    };
    let init = start(&seeds);
    let run = pretrain(&init, &splits.train, &splits.validation, &cfg, &seeds).unwrap();
    assert_eq!(run.log.losses().len(), 1);

    // with three items every anchor's companions are forced, so the mined
    // triplets do not depend on the mining stream
    let outs: Vec<_> = splits.train.iter().map(|s| forward(&init, &s.image).unwrap()).collect();
    let emb: Vec<Vec<f64>> = outs.iter().map(|o| o.embedding.iter().map(|&v| f64::from(v)).collect()).collect();
    let items: Vec<BatchItem<'_>> = (0..3)
        .map(|k| BatchItem {
            embedding: &emb[k],
            prediction: f64::from(outs[k].prediction),
            target: splits.train[k].label,
            second: None,
        })
        .collect();
    let labels: Vec<f64> = splits.train.iter().map(|s| s.label.unwrap()).collect();
    let triplets = ssreg_core::losses::mine_triplets(&labels, &mut ssreg_core::seed::rng(0));
    let weights = LossWeights { consistency: 0.0, ..cfg.loss_weights() };
    let (expected, _) = total_loss(&items, LossMode::Pretrain, &weights, &triplets).unwrap();
    let logged = run.log.losses()[0];
    assert!((logged - expected.value).abs() < 1e-12, "{logged} vs {}", expected.value);
}

#[test]
fn evaluation_of_exact_and_constant_models() {
    let seeds = RunSeeds::from_master(9);
    let splits = tiny_splits(&seeds, 0);
    let model = start(&seeds);

    // relabel the test split with the model's own outputs
    let preds = predict(&model, &splits.test).unwrap();
    let mut exact = splits.test.clone();
    for (s, p) in exact.iter_mut().zip(&preds) {
        s.label = Some(*p);
    }
    let report = evaluate(&model, &exact, "test", 0).unwrap();
    assert!((report.r_value.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(report.rmse, 0.0);
    assert_eq!(report, evaluate(&model, &exact, "test", 0).unwrap());

    let mut constant = ModelParams::<f32>::zeros(&ModelSpec::default()).unwrap();
    let c = 0.75f32;
    constant.arrays_mut().last_mut().unwrap().data[0] = c;
    let report = evaluate(&constant, &splits.test, "test", 0).unwrap();
    assert_eq!(report.r_value, None);
    let labels: Vec<f64> = splits.test.iter().map(|s| s.label.unwrap()).collect();
    let want = (labels.iter().map(|y| (y - f64::from(c)).powi(2)).sum::<f64>() / labels.len() as f64).sqrt();
    assert!((report.rmse - want).abs() < 1e-12);
    assert_eq!(report.n, labels.len());
}
