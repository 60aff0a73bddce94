use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!("{} targets vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one row".into()));
    }
    Ok(())
}

/// Mean squared error over all rows.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(s / y_true.len() as f64)
}

/// Mean absolute error over all rows.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check(y_true, y_pred)?;
    let s: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    Ok(s / y_true.len() as f64)
}

/// Fraction of consecutive pairs whose changes share a sign. A zero change
/// only matches another zero change.
pub fn directional_accuracy(daily_true: &[f64], daily_pred: &[f64]) -> Result<f64> {
    if daily_true.len() != daily_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} true days vs {} predicted days",
            daily_true.len(),
            daily_pred.len()
        )));
    }
    if daily_true.len() < 2 {
        return Err(Error::InvalidInput("directional accuracy needs at least two days".into()));
    }
    let sign = |d: f64| {
        if d > 0.0 {
            1
        } else if d < 0.0 {
            -1
        } else {
            0
        }
    };
    let pairs = daily_true.len() - 1;
    let hits = (0..pairs)
        .filter(|&t| sign(daily_true[t + 1] - daily_true[t]) == sign(daily_pred[t + 1] - daily_pred[t]))
        .count();
    Ok(hits as f64 / pairs as f64)
}

/// Error metrics of one model on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub mse: f64,
    pub mae: f64,
    /// Absent when the test period has fewer than two days.
    pub directional_accuracy: Option<f64>,
}
