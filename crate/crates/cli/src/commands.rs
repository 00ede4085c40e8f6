//! `generate`, `train` and `scatter`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssreg_core::data::{generate_splits, load_manifest, write_manifest, Splits};
use ssreg_core::diffnet::AdamConfig;
use ssreg_core::metrics::{evaluate, predict, MetricsReport};
use ssreg_core::seed::RunSeeds;
use ssreg_core::ssl::{finetune, AdamScalars, load_checkpoint, pretrain, save_checkpoint, CheckpointMeta, StageResult, TrainLog};
use ssreg_core::{Error, ModelParams, Result, Sample, StrategyKind};

use crate::config::ExperimentConfig;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const SPLIT_NAMES: [&str; 4] = ["train", "unlabeled", "validation", "test"];

/// Makes `dir` ready to receive fresh output. A non-empty directory is only
/// replaced with `force`, and only if it holds a previous run's output.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some();
        if non_empty {
            if !force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty; pass --force to replace it",
                    dir.display()
                )));
            }
            if !dir.join(RESOLVED_CONFIG).is_file() {
                return Err(Error::Config(format!(
                    "refusing to replace {}: it does not look like a previous run (no {RESOLVED_CONFIG})",
                    dir.display()
                )));
            }
            fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes") + "\n"
}

/// Split sizes and seed of a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub seed: u64,
    pub train: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
}

impl DatasetSummary {
    fn of(seed: u64, splits: &Splits) -> Self {
        Self {
            seed,
            train: splits.train.len(),
            unlabeled: splits.unlabeled.len(),
            validation: splits.validation.len(),
            test: splits.test.len(),
        }
    }
}

/// Writes the four splits for `seed` as manifests plus PGM images.
pub fn generate(cfg: &ExperimentConfig, seed: u64, out: &Path, force: bool) -> Result<DatasetSummary> {
    prepare_output_dir(out, force)?;
    let splits = generate_splits(&cfg.split, RunSeeds::from_master(seed).data, &cfg.synth)?;
    for (name, samples) in splits.iter_named() {
        write_manifest(samples, &out.join(name).join("manifest.csv"))?;
    }
    let summary = DatasetSummary::of(seed, &splits);
    write_text(&out.join("summary.json"), &to_json(&summary))?;
    let resolved = ExperimentConfig { seeds: vec![seed], data_dir: out.to_path_buf(), ..cfg.clone() };
    write_text(&out.join(RESOLVED_CONFIG), &resolved.to_toml())?;
    log::info!("wrote dataset for seed {seed} to {}", out.display());
    Ok(summary)
}

fn require_labels(name: &str, samples: &[Sample]) -> Result<()> {
    match samples.iter().find(|s| s.label.is_none()) {
        Some(s) => Err(Error::Data(format!("{name} split: sample {} has no label", s.id))),
        None => Ok(()),
    }
}

/// Reads a dataset tree written by [`generate`].
pub fn load_dataset(dir: &Path, cfg: &ExperimentConfig) -> Result<Splits> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("no dataset at {}; run `ssreg generate` first", dir.display())));
    }
    let mut loaded = Vec::with_capacity(4);
    for name in SPLIT_NAMES {
        let path = dir.join(name).join("manifest.csv");
        if !path.is_file() {
            return Err(Error::Data(format!("dataset at {} lacks {}", dir.display(), path.display())));
        }
        let samples = load_manifest(&path)?;
        if let Some(s) = samples
            .iter()
            .find(|s| s.image.height() != cfg.model.input_height || s.image.width() != cfg.model.input_width)
        {
            return Err(Error::Data(format!(
                "{}: image {} is {}x{}, the model expects {}x{}",
                path.display(),
                s.id,
                s.image.height(),
                s.image.width(),
                cfg.model.input_height,
                cfg.model.input_width
            )));
        }
        loaded.push(samples);
    }
    let test = loaded.pop().expect("four splits");
    let validation = loaded.pop().expect("four splits");
    let mut unlabeled = loaded.pop().expect("four splits");
    let train = loaded.pop().expect("four splits");
    require_labels("train", &train)?;
    require_labels("validation", &validation)?;
    require_labels("test", &test)?;
    if train.is_empty() || validation.len() < 2 {
        return Err(Error::Data("the train split must be non-empty and validation needs two samples".into()));
    }
    if unlabeled.iter().any(Sample::is_labeled) {
        log::warn!("labels in the unlabeled split are ignored");
        unlabeled.iter_mut().for_each(|s| s.label = None);
    }
    Ok(Splits { train, unlabeled, validation, test })
}

/// Output of one `train` run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub strategy: StrategyKind,
    pub validation: MetricsReport,
    pub test: MetricsReport,
    pub out_dir: PathBuf,
}

fn stage_meta(cfg: &ExperimentConfig, strategy: &str, lr: f64, stage: &StageResult) -> CheckpointMeta {
    CheckpointMeta {
        spec: cfg.model.clone(),
        strategy: strategy.to_string(),
        adam: Some(AdamScalars {
            config: AdamConfig { lr, weight_decay: cfg.train.weight_decay, ..AdamConfig::default() },
            step: stage.adam_steps,
        }),
        trainer: stage.state.clone(),
    }
}

fn log_csv(logs: &[&TrainLog]) -> String {
    let mut text = String::from(TrainLog::CSV_HEADER);
    text.push('\n');
    for log in logs {
        for row in log.csv_rows() {
            text.push_str(&row);
            text.push('\n');
        }
    }
    text
}

pub fn metrics_csv(reports: &[&MetricsReport]) -> String {
    let mut text = String::from(MetricsReport::CSV_HEADER);
    text.push('\n');
    for r in reports {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    text
}

/// Pre-trains, runs `strategy`'s fine-tuning stage and writes the training
/// log, checkpoints and final metrics to `out`.
pub fn train(cfg: &ExperimentConfig, seed: u64, strategy: StrategyKind, out: &Path, force: bool) -> Result<TrainSummary> {
    let splits = load_dataset(&cfg.data_dir, cfg)?;
    prepare_output_dir(out, force)?;
    let resolved = ExperimentConfig { seeds: vec![seed], strategy, out_dir: out.to_path_buf(), ..cfg.clone() };
    write_text(&out.join(RESOLVED_CONFIG), &resolved.to_toml())?;

    let seeds = RunSeeds::from_master(seed);
    let init = ModelParams::<f32>::init(&cfg.model, seeds.init)?;
    log::info!("pre-training for {} epochs", cfg.train.pretrain_epochs);
    let pre = pretrain(&init, &splits.train, &splits.validation, &cfg.train, &seeds)?;
    let last_lr = cfg.train.pretrain_lr_at(cfg.train.pretrain_epochs.saturating_sub(1));
    save_checkpoint(&out.join("pretrain.ssreg"), &pre.params, &stage_meta(cfg, "pretrain", last_lr, &pre))?;

    log::info!("fine-tuning with {strategy}");
    let fine = finetune(strategy, &pre.params, &splits, &cfg.train, &seeds)?;
    let (params, logs) = match &fine {
        Some(f) => {
            save_checkpoint(&out.join("final.ssreg"), &f.params, &stage_meta(cfg, strategy.name(), cfg.train.finetune_lr, f))?;
            (&f.params, vec![&pre.log, &f.log])
        }
        None => {
            save_checkpoint(&out.join("final.ssreg"), &pre.params, &stage_meta(cfg, strategy.name(), last_lr, &pre))?;
            (&pre.params, vec![&pre.log])
        }
    };
    write_text(&out.join("train_log.csv"), &log_csv(&logs))?;

    let epoch = logs.last().expect("at least one stage").best_eval;
    let validation = evaluate(params, &splits.validation, "validation", epoch)?;
    let test = evaluate(params, &splits.test, "test", epoch)?;
    write_text(&out.join("metrics.csv"), &metrics_csv(&[&validation, &test]))?;
    log::info!("{test}");
    Ok(TrainSummary { strategy, validation, test, out_dir: out.to_path_buf() })
}

/// Writes `id,ground_truth,prediction` for every sample of `split`, sorted
/// by id. Returns the number of rows.
pub fn scatter(cfg: &ExperimentConfig, checkpoint: &Path, split: &str, out: &Path) -> Result<usize> {
    if !SPLIT_NAMES.contains(&split) {
        return Err(Error::Config(format!("unknown split {split:?}; expected one of {SPLIT_NAMES:?}")));
    }
    if !checkpoint.is_file() {
        return Err(Error::Data(format!("checkpoint {} not found", checkpoint.display())));
    }
    let (params, _) = load_checkpoint(checkpoint)?;
    let manifest = cfg.data_dir.join(split).join("manifest.csv");
    if !manifest.is_file() {
        return Err(Error::Data(format!("no {split} split at {}", manifest.display())));
    }
    let mut samples = load_manifest(&manifest)?;
    samples.sort_by(|a, b| a.id.cmp(&b.id));
    let preds = predict(&params, &samples)?;
    let mut text = String::from("id,ground_truth,prediction\n");
    for (s, p) in samples.iter().zip(&preds) {
        let truth = s.label.map(|y| y.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{truth},{p}\n", s.id));
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_text(out, &text)?;
    Ok(samples.len())
}
