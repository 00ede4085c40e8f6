use crate::metrics::{fmt_r, MetricsReport};

/// One epoch of a training stage. `val` is the validation evaluation made
/// *before* the epoch's training (the metrics the gate saw).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
    pub regenerated: bool,
}

/// Per-epoch history of one stage plus the evaluation after its last epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub strategy: String,
    pub records: Vec<EpochRecord>,
    pub final_val: MetricsReport,
    /// Index of the selected evaluation: `k < records.len()` is the model
    /// before epoch `k`, `records.len()` the final model.
    pub best_eval: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,strategy,train_loss,val_r,val_rmse,val_mse,regenerated";

    pub fn best_val(&self) -> &MetricsReport {
        self.records.get(self.best_eval).map_or(&self.final_val, |r| &r.val)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.train_loss).collect()
    }

    /// CSV rows (no header). The closing row carries the final evaluation
    /// and an empty loss.
    pub fn csv_rows(&self) -> Vec<String> {
        let row = |epoch: usize, loss: String, v: &MetricsReport, regen: bool| {
            format!("{epoch},{},{loss},{},{},{},{regen}", self.strategy, fmt_r(v.r_value), v.rmse, v.mse)
        };
        let mut rows: Vec<String> =
            self.records.iter().map(|r| row(r.epoch, r.train_loss.to_string(), &r.val, r.regenerated)).collect();
        rows.push(row(self.records.len(), String::new(), &self.final_val, false));
        rows
    }
}
