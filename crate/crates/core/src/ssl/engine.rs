//! One training epoch, shared by every strategy.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentConfig, ImageTensor, Sample};
use crate::diffnet::{adam_step, forward, AdamState, ForwardOutput, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::losses::{mine_triplets, total_loss, BatchItem, LossMode, LossTerms, LossWeights, Triplet};
use crate::seed;

/// Where a training item's regression target comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Label(f64),
    Pseudo(f64),
    /// Prediction of the mean-teacher model on the item's second view.
    Teacher,
    /// No regression target; the item only feeds consistency terms.
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub sample: &'a Sample,
    pub target: Target,
}

/// Everything that parameterises one epoch besides the model.
#[derive(Debug, Clone, Copy)]
pub struct EpochSetup<'a> {
    /// Distinguishes random streams of separate training stages.
    pub stage: &'a str,
    pub epoch: usize,
    pub mode: LossMode,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub augment: &'a AugmentConfig,
    pub augment_seed: u64,
    pub mining_seed: u64,
    pub triplet_on_pseudo: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochOutcome {
    /// Mean total loss over batches.
    pub loss: f64,
    pub terms: LossTerms,
    pub batches: usize,
    /// First-view training predictions by item index.
    pub predictions: Vec<(usize, f64)>,
}

/// Random stream for the augmentations of one sample in one epoch. Keyed by
/// id, so the views of a sample do not depend on batch composition.
fn view_rng(setup: &EpochSetup<'_>, id: &str) -> ChaCha8Rng {
    let stage = seed::derive(setup.augment_seed, setup.stage);
    seed::rng(seed::derive(seed::derive_index(stage, setup.epoch as u64), id))
}

/// Batch order of one epoch.
pub fn epoch_order(setup: &EpochSetup<'_>, n: usize) -> Vec<usize> {
    let stage = seed::derive(setup.mining_seed, setup.stage);
    let mut rng = seed::rng(seed::derive_index(seed::derive(stage, "shuffle"), setup.epoch as u64));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn mining_rng(setup: &EpochSetup<'_>, batch: usize) -> ChaCha8Rng {
    let stage = seed::derive(seed::derive(setup.mining_seed, setup.stage), "triplets");
    seed::rng(seed::derive_index(seed::derive_index(stage, setup.epoch as u64), batch as u64))
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// Trains `params` for one epoch over `items` in mini-batches.
///
/// `teacher`, when given, supplies [`Target::Teacher`] targets and is
/// updated as an exponential moving average of the student after every
/// optimizer step with the given decay.
pub fn run_epoch(
    params: &mut ModelParams<f32>,
    adam: &mut AdamState<f32>,
    items: &[TrainItem<'_>],
    setup: &EpochSetup<'_>,
    mut teacher: Option<(&mut ModelParams<f32>, f32)>,
) -> Result<EpochOutcome> {
    if items.is_empty() {
        return Err(Error::Usage("training epoch over an empty item list".into()));
    }
    let two_views = setup.mode == LossMode::SelfTrain && setup.weights.consistency != 0.0;
    let mode = if two_views { LossMode::SelfTrain } else { LossMode::Pretrain };
    let needs_second = two_views || items.iter().any(|it| it.target == Target::Teacher);
    if items.iter().any(|it| it.target == Target::Teacher) && teacher.is_none() {
        return Err(Error::Usage("teacher targets requested without a teacher model".into()));
    }

    let order = epoch_order(setup, items.len());
    let mut out = EpochOutcome::default();
    for (b, chunk) in order.chunks(setup.batch_size).enumerate() {
        let mut views: Vec<(ImageTensor, Option<ImageTensor>)> = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let mut rng = view_rng(setup, &items[i].sample.id);
            let first = augment(items[i].sample, setup.augment, &mut rng);
            let second = needs_second.then(|| augment(items[i].sample, setup.augment, &mut rng));
            views.push((first, second));
        }

        let mut targets = Vec::with_capacity(chunk.len());
        for (k, &i) in chunk.iter().enumerate() {
            targets.push(match items[i].target {
                Target::Label(y) | Target::Pseudo(y) => Some(y),
                Target::None => None,
                Target::Teacher => {
                    let (t, _) = teacher.as_ref().expect("checked above");
                    let view = views[k].1.as_ref().expect("second view drawn for teacher items");
                    Some(f64::from(forward(&**t, view)?.prediction))
                }
            });
        }

        let (loss, terms, grads) = {
            let snapshot: &ModelParams<f32> = params;
            let firsts: Vec<ForwardOutput<'_, f32>> =
                views.iter().map(|(v, _)| forward(snapshot, v)).collect::<Result<_>>()?;
            let seconds: Vec<Option<ForwardOutput<'_, f32>>> = if two_views {
                views
                    .iter()
                    .map(|(_, v)| forward(snapshot, v.as_ref().expect("drawn")).map(Some))
                    .collect::<Result<_>>()?
            } else {
                views.iter().map(|_| None).collect()
            };
            let e1: Vec<Vec<f64>> = firsts.iter().map(|o| to_f64(&o.embedding)).collect();
            let e2: Vec<Option<Vec<f64>>> = seconds.iter().map(|o| o.as_ref().map(|o| to_f64(&o.embedding))).collect();
            let batch: Vec<BatchItem<'_>> = (0..chunk.len())
                .map(|k| BatchItem {
                    embedding: &e1[k],
                    prediction: f64::from(firsts[k].prediction),
                    target: targets[k],
                    second: e2[k].as_deref().map(|e| (e, f64::from(seconds[k].as_ref().expect("paired").prediction))),
                })
                .collect();

            let triplets = if setup.weights.triplet != 0.0 {
                batch_triplets(items, chunk, &targets, setup, b)
            } else {
                Vec::new()
            };
            let (loss, terms) = total_loss(&batch, mode, &setup.weights, &triplets)?;
            if !loss.value.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss in stage {} epoch {} batch {b}",
                    setup.stage, setup.epoch
                )));
            }

            let mut grads = Gradients::zeros_like(snapshot);
            for k in 0..chunk.len() {
                let de: Vec<f32> = loss.grad.embedding[k].iter().map(|&g| g as f32).collect();
                firsts[k].tape.backward_into(&de, loss.grad.prediction[k] as f32, &mut grads)?;
                if let Some(o) = &seconds[k] {
                    let de: Vec<f32> = loss.grad.embedding_2[k].iter().map(|&g| g as f32).collect();
                    o.tape.backward_into(&de, loss.grad.prediction_2[k] as f32, &mut grads)?;
                }
            }
            out.predictions.extend(chunk.iter().zip(&firsts).map(|(&i, o)| (i, f64::from(o.prediction))));
            (loss.value, terms, grads)
        };

        adam_step(params, &grads, adam).map_err(|e| match e {
            Error::Divergence(m) => {
                Error::Divergence(format!("{m} (stage {} epoch {} batch {b})", setup.stage, setup.epoch))
            }
            other => other,
        })?;
        if let Some((t, decay)) = teacher.as_mut() {
            t.ema_update(params, *decay)?;
        }

        out.loss += loss;
        out.terms.mse += terms.mse;
        out.terms.triplet += terms.triplet;
        out.terms.consistency += terms.consistency;
        out.batches += 1;
    }
    let nb = out.batches as f64;
    out.loss /= nb;
    out.terms.mse /= nb;
    out.terms.triplet /= nb;
    out.terms.consistency /= nb;
    Ok(out)
}

/// Mines triplets among the batch items eligible for the triplet term and
/// maps them back to batch positions.
fn batch_triplets(
    items: &[TrainItem<'_>],
    chunk: &[usize],
    targets: &[Option<f64>],
    setup: &EpochSetup<'_>,
    batch: usize,
) -> Vec<Triplet> {
    let eligible: Vec<usize> = (0..chunk.len())
        .filter(|&k| match items[chunk[k]].target {
            Target::Label(_) => true,
            Target::Pseudo(_) => setup.triplet_on_pseudo,
            Target::Teacher | Target::None => false,
        })
        .collect();
    let labels: Vec<f64> = eligible.iter().map(|&k| targets[k].expect("eligible items have targets")).collect();
    mine_triplets(&labels, &mut mining_rng(setup, batch))
        .into_iter()
        .map(|t| Triplet { anchor: eligible[t.anchor], near: eligible[t.near], far: eligible[t.far], alpha: t.alpha })
        .collect()
}
