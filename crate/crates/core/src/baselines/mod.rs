//! Discriminative baselines, error metrics and the policy comparison
//! harness.

mod forest;
mod metrics;
mod mlp;
mod ols;
mod policy_eval;

pub use forest::{rf_fit, rf_predict, ForestConfig, RandomForest, RegressionTree};
pub use metrics::{directional_accuracy, mae, mse, MetricReport};
pub use mlp::{mlp_fit, mlp_loss_grad, mlp_predict, MlpConfig, MlpRegressor, Standardizer};
pub use ols::{ols_fit, ols_predict, OlsModel, RIDGE_FLOOR};
pub use policy_eval::{
    evaluate_policies, median, PolicyEvalConfig, PolicyEvalRow, PolicyEvalTable, PolicyKind, PolicySuite,
    PolicySummaryRow,
};

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::DesignMatrix;
use crate::inference::PredictionSummary;
use crate::retail::RetailEnvironmentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct BaselineConfig {
    pub forest: ForestConfig,
    pub mlp: MlpConfig,
}

/// Sums row values per date, in date order.
pub fn daily_totals(dates: &[NaiveDate], values: &[f64]) -> Vec<(NaiveDate, f64)> {
    let mut by_day: BTreeMap<NaiveDate, f64> = BTreeMap::new();
    for (d, v) in dates.iter().zip(values) {
        *by_day.entry(*d).or_default() += v;
    }
    by_day.into_iter().collect()
}

/// Per-row revenue predictions of one model on the test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelPredictions {
    pub model: String,
    pub revenue: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub reports: Vec<MetricReport>,
    pub predictions: Vec<ModelPredictions>,
}

impl ModelEvaluation {
    pub fn report(&self, model: &str) -> Option<&MetricReport> {
        self.reports.iter().find(|r| r.model == model)
    }
}

fn score(model: &str, truth: &[f64], pred: &[f64], dates: &[NaiveDate]) -> Result<MetricReport> {
    let dt: Vec<f64> = daily_totals(dates, truth).into_iter().map(|d| d.1).collect();
    let dp: Vec<f64> = daily_totals(dates, pred).into_iter().map(|d| d.1).collect();
    Ok(MetricReport {
        model: model.to_string(),
        mse: mse(truth, pred)?,
        mae: mae(truth, pred)?,
        directional_accuracy: if dt.len() >= 2 { Some(directional_accuracy(&dt, &dp)?) } else { None },
    })
}

/// Fits OLS, random forest and MLP on the training quantities, predicts the
/// test rows and scores revenue (price times quantity) next to the
/// posterior-predictive means in `psd`.
pub fn evaluate_models(
    train: &DesignMatrix,
    test: &DesignMatrix,
    env: &RetailEnvironmentSpec,
    psd: &PredictionSummary,
    cfg: &BaselineConfig,
    seed: u64,
) -> Result<ModelEvaluation> {
    if psd.rows.len() != test.n_rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictive rows for {} test rows",
            psd.rows.len(),
            test.n_rows()
        )));
    }
    let cols = train.n_cols();
    let prices = test.prices_per_row(env);
    let to_revenue = |q: Vec<f64>| -> Vec<f64> { q.iter().zip(&prices).map(|(q, p)| q * p).collect() };
    let truth = to_revenue(test.y.clone());
    let dates: Vec<NaiveDate> = test.rows.iter().map(|r| r.date).collect();

    let ols = ols_fit(&train.x, &train.y, cols)?;
    let rf = rf_fit(&train.x, &train.y, cols, &cfg.forest, seed)?;
    let net = mlp_fit(&train.x, &train.y, cols, &cfg.mlp, seed)?;
    let predictions = vec![
        ModelPredictions { model: "OLS".into(), revenue: to_revenue(ols_predict(&ols, &test.x)?) },
        ModelPredictions { model: "RF".into(), revenue: to_revenue(rf_predict(&rf, &test.x)?) },
        ModelPredictions { model: "MLP".into(), revenue: to_revenue(mlp_predict(&net, &test.x)?) },
        ModelPredictions { model: "PSD".into(), revenue: psd.point_estimates() },
    ];
    let reports =
        predictions.iter().map(|p| score(&p.model, &truth, &p.revenue, &dates)).collect::<Result<Vec<_>>>()?;
    Ok(ModelEvaluation { reports, predictions })
}
