//! Pearson correlation, RMSE and MSE.

use std::fmt;

use crate::data::Sample;
use crate::diffnet::{forward, ModelParams};
use crate::error::{Error, Result};

/// Sample Pearson correlation accumulated in one pass with co-moment
/// updates. `None` when either vector has zero variance.
pub fn pearson_r(preds: &[f64], truths: &[f64]) -> Result<Option<f64>> {
    if preds.len() != truths.len() || preds.len() < 2 {
        return Err(Error::Usage(format!(
            "pearson_r needs equal lengths >= 2, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (k, (&x, &y)) in preds.iter().zip(truths).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

pub fn mse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    if preds.len() != truths.len() || preds.is_empty() {
        return Err(Error::Usage(format!(
            "mse needs equal non-empty lengths, got {} and {}",
            preds.len(),
            truths.len()
        )));
    }
    Ok(preds.iter().zip(truths).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / preds.len() as f64)
}

pub fn rmse(preds: &[f64], truths: &[f64]) -> Result<f64> {
    mse(preds, truths).map(f64::sqrt)
}

/// Metrics of one model on one split at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub split: String,
    pub epoch: usize,
    /// `None` when the correlation is undefined (constant predictions).
    pub r_value: Option<f64>,
    pub rmse: f64,
    pub mse: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_predictions(split: &str, epoch: usize, preds: &[f64], truths: &[f64]) -> Result<Self> {
        let mse = mse(preds, truths)?;
        let r_value = if preds.len() >= 2 { pearson_r(preds, truths)? } else { None };
        Ok(Self { split: split.to_string(), epoch, r_value, rmse: mse.sqrt(), mse, n: preds.len() })
    }

    pub const CSV_HEADER: &'static str = "epoch,split,r_value,rmse,mse,n";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.split, fmt_r(self.r_value), self.rmse, self.mse, self.n)
    }
}

/// Formats an optional correlation, writing `undefined` for `None`.
pub fn fmt_r(r: Option<f64>) -> String {
    match r {
        Some(r) => r.to_string(),
        None => "undefined".to_string(),
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}: R={} RMSE={:.4} (n={})", self.split, self.epoch, fmt_r(self.r_value), self.rmse, self.n)
    }
}

/// Un-augmented predictions for every sample, in input order.
pub fn predict(params: &ModelParams<f32>, samples: &[Sample]) -> Result<Vec<f64>> {
    samples.iter().map(|s| forward(params, &s.image).map(|o| f64::from(o.prediction))).collect()
}

/// Runs the model on every labeled sample of a split and aggregates metrics.
/// Reduction order is by sample id.
pub fn evaluate(params: &ModelParams<f32>, samples: &[Sample], split: &str, epoch: usize) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::Usage(format!("cannot evaluate on empty split {split}")));
    }
    let mut pairs = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.label.ok_or_else(|| Error::Data(format!("sample {} in split {split} has no label", s.id)))?;
        let out = forward(params, &s.image)?;
        pairs.push((s.id.as_str(), f64::from(out.prediction), label));
    }
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    let preds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let truths: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    MetricsReport::from_predictions(split, epoch, &preds, &truths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_correlations() {
        let pos = pearson_r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().unwrap();
        let neg = pearson_r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap().unwrap();
        assert!((pos - 1.0).abs() <= 4.0 * f64::EPSILON, "{pos}");
        assert!((neg + 1.0).abs() <= 4.0 * f64::EPSILON, "{neg}");
    }

    #[test]
    fn constant_input_is_undefined() {
        assert_eq!(pearson_r(&[0.5; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap(), None);
        assert!(pearson_r(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn csv_row_marks_undefined() {
        let r = MetricsReport::from_predictions("val", 3, &[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert_eq!(r.csv_row(), "3,val,undefined,0.5,0.25,2");
    }

    proptest! {
        #[test]
        fn pearson_symmetric(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3..40)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let r1 = pearson_r(&a, &b).unwrap();
            let r2 = pearson_r(&b, &a).unwrap();
            match (r1, r2) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
