use std::collections::BTreeMap;

/// Per-sample exponential moving average of predictions with bias
/// correction, as used by temporal ensembling.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEma {
    decay: f64,
    accum: BTreeMap<String, f64>,
    steps: u32,
}

impl PredictionEma {
    pub fn new(decay: f64) -> Self {
        Self { decay, accum: BTreeMap::new(), steps: 0 }
    }

    /// Folds in one epoch of predictions: `Z ← β·Z + (1−β)·z`.
    /// Samples absent from `predictions` keep their accumulator.
    pub fn update<'a>(&mut self, predictions: impl IntoIterator<Item = (&'a str, f64)>) {
        self.steps += 1;
        for (id, z) in predictions {
            let acc = self.accum.entry(id.to_string()).or_insert(0.0);
            *acc = self.decay * *acc + (1.0 - self.decay) * z;
        }
    }

    /// Bias-corrected target `Z / (1 − β^t)`.
    pub fn target(&self, id: &str) -> Option<f64> {
        let acc = self.accum.get(id)?;
        Some(acc / (1.0 - self.decay.powi(self.steps as i32)))
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }
}
