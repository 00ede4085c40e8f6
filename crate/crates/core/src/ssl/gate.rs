use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// State of the validation-gated self-training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub total_epochs: usize,
    /// Best validation R seen at a regeneration (starts at 0).
    pub best_r: f64,
    /// Best validation MSE seen at a regeneration (starts at +∞).
    #[serde(serialize_with = "ser_inf", deserialize_with = "de_inf")]
    pub best_mse: f64,
    /// Current pseudo-label of every unlabeled sample, by id.
    pub pseudo_labels: BTreeMap<String, f64>,
    /// Epochs at which pseudo-labels were regenerated.
    pub regenerations: Vec<usize>,
}

// JSON has no infinity; +∞ is written as null.
fn ser_inf<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() { s.serialize_none() } else { s.serialize_some(v) }
}

fn de_inf<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl TrainerState {
    pub fn new(total_epochs: usize) -> Self {
        Self {
            epoch: 0,
            total_epochs,
            best_r: 0.0,
            best_mse: f64::INFINITY,
            pseudo_labels: BTreeMap::new(),
            regenerations: Vec::new(),
        }
    }

    /// Whether validation metrics `(r, mse)` beat the best so far on both
    /// counts. An undefined correlation never does.
    pub fn improves(&self, r: Option<f64>, mse: f64) -> bool {
        matches!(r, Some(r) if r > self.best_r) && mse < self.best_mse
    }

    /// Applies the gate for the current epoch: on improvement the bests are
    /// updated, the epoch is logged as a regeneration and `true` is returned.
    pub fn observe(&mut self, r: Option<f64>, mse: f64) -> bool {
        if !self.improves(r, mse) {
            return false;
        }
        self.best_r = r.expect("improves implies defined");
        self.best_mse = mse;
        self.regenerations.push(self.epoch);
        true
    }
}

/// Regeneration epochs the gate produces for a scripted metric sequence.
pub fn replay_gate(metrics: &[(Option<f64>, f64)]) -> Vec<usize> {
    let mut state = TrainerState::new(metrics.len());
    for (e, &(r, mse)) in metrics.iter().enumerate() {
        state.epoch = e;
        state.observe(r, mse);
    }
    state.regenerations
}
