//! Loss functions and in-batch triplet construction.
//!
//! Every loss returns its value together with the exact partial derivatives
//! with respect to its inputs, ready to be fed to
//! [`Tape::backward`](crate::diffnet::Tape::backward). Arithmetic is `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A loss value together with its gradient with respect to the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<G> {
    pub value: f64,
    pub grad: G,
}

/// Mined triplet of batch indices. `near` is the companion whose label is
/// closer to the anchor's.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub anchor: usize,
    pub near: usize,
    pub far: usize,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: Vec<f64>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyGrad {
    pub embedding_1: Vec<f64>,
    pub embedding_2: Vec<f64>,
    pub prediction_1: f64,
    pub prediction_2: f64,
}

/// `(y − y')²` and its derivative with respect to the prediction `y'`.
pub fn mse_loss(prediction: f64, truth: f64) -> LossValue<f64> {
    let diff = prediction - truth;
    LossValue { value: diff * diff, grad: 2.0 * diff }
}

/// Margin scale of a triplet: `(y_a − y_f)² − (y_a − y_n)²`.
///
/// The caller must have ordered the triplet so that the near label is no
/// further from the anchor than the far label.
pub fn adaptive_coefficient(y_anchor: f64, y_near: f64, y_far: f64) -> Result<f64> {
    let dn = (y_anchor - y_near).abs();
    let df = (y_anchor - y_far).abs();
    if dn > df {
        return Err(Error::Usage(format!(
            "triplet mis-ordered: near distance {dn} exceeds far distance {df}"
        )));
    }
    Ok((y_anchor - y_far).powi(2) - (y_anchor - y_near).powi(2))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dims(vs: &[&[f64]]) -> Result<()> {
    let d = vs[0].len();
    if vs.iter().any(|v| v.len() != d) {
        return Err(Error::Usage(format!(
            "embedding dimension mismatch: {:?}",
            vs.iter().map(|v| v.len()).collect::<Vec<_>>()
        )));
    }
    Ok(())
}

/// `[‖F_a−F_n‖² − ‖F_a−F_f‖² + α·m]₊`. The hinge subgradient at 0 is 0.
pub fn adaptive_triplet_loss(
    anchor: &[f64],
    near: &[f64],
    far: &[f64],
    alpha: f64,
    margin: f64,
) -> Result<LossValue<TripletGrad>> {
    check_dims(&[anchor, near, far])?;
    let raw = sq_dist(anchor, near) - sq_dist(anchor, far) + alpha * margin;
    let d = anchor.len();
    if raw <= 0.0 {
        return Ok(LossValue {
            value: 0.0,
            grad: TripletGrad { anchor: vec![0.0; d], near: vec![0.0; d], far: vec![0.0; d] },
        });
    }
    let mut grad = TripletGrad { anchor: vec![0.0; d], near: vec![0.0; d], far: vec![0.0; d] };
    for k in 0..d {
        grad.anchor[k] = 2.0 * (far[k] - near[k]);
        grad.near[k] = -2.0 * (anchor[k] - near[k]);
        grad.far[k] = 2.0 * (anchor[k] - far[k]);
    }
    Ok(LossValue { value: raw, grad })
}

/// Triplet loss with a constant margin (the coefficient fixed at 1).
pub fn fixed_triplet_loss(
    anchor: &[f64],
    near: &[f64],
    far: &[f64],
    margin: f64,
) -> Result<LossValue<TripletGrad>> {
    adaptive_triplet_loss(anchor, near, far, 1.0, margin)
}

/// One triplet per batch element as anchor. The two companions are drawn
/// uniformly without replacement from the other indices and ordered by label
/// distance; on a tie the lower index becomes `near`.
///
/// Batches smaller than three yield no triplets.
pub fn mine_triplets<R: Rng + ?Sized>(labels: &[f64], rng: &mut R) -> Vec<Triplet> {
    let n = labels.len();
    if n < 3 {
        log::debug!("batch of {n} is too small for triplets; skipping triplet loss");
        return Vec::new();
    }
    (0..n)
        .map(|a| {
            // uniform pair from the n−1 non-anchor indices
            let mut i = rng.gen_range(0..n - 1);
            let mut j = rng.gen_range(0..n - 2);
            if j >= i {
                j += 1;
            }
            if i >= a {
                i += 1;
            }
            if j >= a {
                j += 1;
            }
            let (lo, hi) = if i < j { (i, j) } else { (j, i) };
            let (near, far) = if (labels[a] - labels[hi]).abs() < (labels[a] - labels[lo]).abs() {
                (hi, lo)
            } else {
                (lo, hi)
            };
            let alpha = adaptive_coefficient(labels[a], labels[near], labels[far])
                .expect("companions ordered by distance");
            Triplet { anchor: a, near, far, alpha }
        })
        .collect()
}

/// `‖F_1−F_2‖² + (y_1−y_2)²` between two views of one image.
pub fn consistency_loss(
    embedding_1: &[f64],
    embedding_2: &[f64],
    prediction_1: f64,
    prediction_2: f64,
) -> Result<LossValue<ConsistencyGrad>> {
    check_dims(&[embedding_1, embedding_2])?;
    let dy = prediction_1 - prediction_2;
    let value = sq_dist(embedding_1, embedding_2) + dy * dy;
    let e1: Vec<f64> = embedding_1.iter().zip(embedding_2).map(|(a, b)| 2.0 * (a - b)).collect();
    let e2 = e1.iter().map(|g| -g).collect();
    Ok(LossValue {
        value,
        grad: ConsistencyGrad { embedding_1: e1, embedding_2: e2, prediction_1: 2.0 * dy, prediction_2: -2.0 * dy },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `L_mse + λ·L_triplet` on one view.
    Pretrain,
    /// `L_mse + λ·L_triplet + λ'·L_c` with two views per item.
    SelfTrain,
}

/// Which terms of the consistency loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyTerms {
    /// Embedding and prediction terms.
    Full,
    /// Prediction term only (Π-model output consistency).
    PredictionOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub triplet: f64,
    pub consistency: f64,
    pub margin: f64,
    pub adaptive: bool,
    pub consistency_terms: ConsistencyTerms,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { triplet: 0.5, consistency: 1.0, margin: 0.5, adaptive: true, consistency_terms: ConsistencyTerms::Full }
    }
}

/// Network outputs for one batch element.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub embedding: &'a [f64],
    pub prediction: f64,
    /// Regression target (true label or pseudo-label); `None` excludes the
    /// item from the MSE term.
    pub target: Option<f64>,
    /// Outputs on the second augmented view.
    pub second: Option<(&'a [f64], f64)>,
}

/// Upstream gradients for every view of every batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchGrad {
    pub embedding: Vec<Vec<f64>>,
    pub prediction: Vec<f64>,
    pub embedding_2: Vec<Vec<f64>>,
    pub prediction_2: Vec<f64>,
}

/// Per-term breakdown of a batch loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub mse: f64,
    pub triplet: f64,
    pub consistency: f64,
}

/// Combined batch objective.
///
/// The MSE term is the mean over items with a target, the triplet term the
/// mean over `triplets` (computed on first-view embeddings) and the
/// consistency term the mean over all items. Triplet indices refer to
/// positions in `items`; their coefficients are used only when
/// `weights.adaptive` is set.
pub fn total_loss(
    items: &[BatchItem<'_>],
    mode: LossMode,
    weights: &LossWeights,
    triplets: &[Triplet],
) -> Result<(LossValue<BatchGrad>, LossTerms)> {
    let n = items.len();
    if n == 0 {
        return Err(Error::Usage("empty batch".into()));
    }
    let d = items[0].embedding.len();
    if items.iter().any(|it| it.embedding.len() != d) {
        return Err(Error::Usage("embedding dimension differs within batch".into()));
    }
    if mode == LossMode::SelfTrain && items.iter().any(|it| it.second.is_none()) {
        return Err(Error::Usage("self-training batch item lacks its second view".into()));
    }
    let mut grad = BatchGrad {
        embedding: vec![vec![0.0; d]; n],
        prediction: vec![0.0; n],
        embedding_2: vec![vec![0.0; d]; n],
        prediction_2: vec![0.0; n],
    };
    let mut terms = LossTerms::default();

    let labeled = items.iter().filter(|it| it.target.is_some()).count();
    if labeled > 0 {
        let scale = 1.0 / labeled as f64;
        for (k, it) in items.iter().enumerate() {
            if let Some(t) = it.target {
                let l = mse_loss(it.prediction, t);
                terms.mse += l.value * scale;
                grad.prediction[k] += l.grad * scale;
            }
        }
    }

    if weights.triplet != 0.0 && !triplets.is_empty() {
        let scale = 1.0 / triplets.len() as f64;
        for t in triplets {
            if [t.anchor, t.near, t.far].iter().any(|&i| i >= n) {
                return Err(Error::Usage(format!("triplet {t:?} indexes outside a batch of {n}")));
            }
            let alpha = if weights.adaptive { t.alpha } else { 1.0 };
            let l = adaptive_triplet_loss(
                items[t.anchor].embedding,
                items[t.near].embedding,
                items[t.far].embedding,
                alpha,
                weights.margin,
            )?;
            terms.triplet += l.value * scale;
            let w = weights.triplet * scale;
            for k in 0..d {
                grad.embedding[t.anchor][k] += w * l.grad.anchor[k];
                grad.embedding[t.near][k] += w * l.grad.near[k];
                grad.embedding[t.far][k] += w * l.grad.far[k];
            }
        }
    }

    if mode == LossMode::SelfTrain && weights.consistency != 0.0 {
        let w = weights.consistency / n as f64;
        for (k, it) in items.iter().enumerate() {
            let (e2, p2) = it.second.expect("checked above");
            let l = match weights.consistency_terms {
                ConsistencyTerms::Full => consistency_loss(it.embedding, e2, it.prediction, p2)?,
                ConsistencyTerms::PredictionOnly => {
                    let zero = vec![0.0; d];
                    let dy = it.prediction - p2;
                    LossValue {
                        value: dy * dy,
                        grad: ConsistencyGrad {
                            embedding_1: zero.clone(),
                            embedding_2: zero,
                            prediction_1: 2.0 * dy,
                            prediction_2: -2.0 * dy,
                        },
                    }
                }
            };
            terms.consistency += l.value / n as f64;
            for j in 0..d {
                grad.embedding[k][j] += w * l.grad.embedding_1[j];
                grad.embedding_2[k][j] += w * l.grad.embedding_2[j];
            }
            grad.prediction[k] += w * l.grad.prediction_1;
            grad.prediction_2[k] += w * l.grad.prediction_2;
        }
    }

    let value = terms.mse + weights.triplet * terms.triplet
        + if mode == LossMode::SelfTrain { weights.consistency * terms.consistency } else { 0.0 };
    Ok((LossValue { value, grad }, terms))
}
