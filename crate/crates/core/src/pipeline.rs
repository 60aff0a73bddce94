//! Glue between datasets, features and fitted posteriors.

use chrono::NaiveDate;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::{assemble_design, fit_scaler, lagged_rows, DesignMatrix, SalesScaler};
use crate::inference::{constrained_draws, posterior_mean_params, quantile_sorted, PosteriorDraws};
use crate::model::{ModelParams, ParamLayout};
use crate::policies::{dqn_train, DqnConfig, TrainedDqn};
use crate::retail::{RetailEnvironmentSpec, DAYS_PER_WEEK};
use crate::sim::{ParamMode, ParamSource, Simulator, SimulatorConfig};

/// Train and test design matrices sharing one scaler.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub scaler: SalesScaler,
    pub train: DesignMatrix,
    pub test: DesignMatrix,
    /// Mean per-row training revenue.
    pub revenue_scale: f64,
}

/// Lags the full dataset first, so the first test day keeps its previous
/// day, then splits by date and scales with training moments only.
pub fn prepare(data: &Dataset, env: &RetailEnvironmentSpec, split_date: NaiveDate) -> Result<PreparedData> {
    let rows = lagged_rows(&data.sales, env)?;
    let (train_rows, test_rows): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r.index.date < split_date);
    if train_rows.is_empty() {
        return Err(Error::InvalidInput(format!("no usable training rows before {split_date}")));
    }
    if test_rows.is_empty() {
        return Err(Error::InvalidInput(format!("no usable test rows on or after {split_date}")));
    }
    let prev: Vec<f64> = train_rows.iter().map(|r| r.index.prev_product_revenue).collect();
    let scaler = fit_scaler(&prev)?;
    let train = assemble_design(&train_rows, env, &scaler)?;
    let test = assemble_design(&test_rows, env, &scaler)?;
    let revenue: f64 = train_rows.iter().map(|r| r.quantity * env.prices[r.index.product]).sum();
    let revenue_scale = (revenue / train_rows.len() as f64).max(1e-8);
    Ok(PreparedData { scaler, train, test, revenue_scale })
}

/// Re-expresses parameters simulated under scaler `from` in the coordinates
/// of scaler `to`, leaving every linear predictor unchanged.
pub fn rescale_truth(params: &ModelParams, from: &SalesScaler, to: &SalesScaler) -> ModelParams {
    let mut p = params.clone();
    p.w_s = params.w_s * to.std / from.std;
    p.b = params.b + params.w_s * (to.mean - from.mean) / from.std;
    p
}

/// Count of weight coordinates whose true value lies inside the central
/// `level` credible interval, and the number of coordinates checked.
pub fn weight_coverage(
    draws: &PosteriorDraws,
    layout: &ParamLayout,
    truth: &ModelParams,
    level: f64,
) -> Result<(usize, usize)> {
    let truth_w = truth.regression_weights();
    let samples: Vec<Vec<f64>> =
        constrained_draws(draws, layout)?.iter().map(ModelParams::regression_weights).collect();
    let tail = 0.5 * (1.0 - level);
    let mut inside = 0;
    for (c, &t) in truth_w.iter().enumerate() {
        let mut v: Vec<f64> = samples.iter().map(|w| w[c]).collect();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = (quantile_sorted(&v, tail), quantile_sorted(&v, 1.0 - tail));
        if t >= lo && t <= hi {
            inside += 1;
        }
    }
    Ok((inside, truth_w.len()))
}

/// Every posterior draw as a parameter set, plus their element-wise mean.
pub fn posterior_source(draws: &PosteriorDraws, layout: &ParamLayout) -> Result<(ParamSource, ModelParams)> {
    let params = constrained_draws(draws, layout)?;
    let mean = posterior_mean_params(draws, layout)?;
    Ok((ParamSource::posterior(params, mean.clone()), mean))
}

/// Settings of the simulator a policy network is trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingEnv {
    pub horizon_days: usize,
    pub placement_cost: f64,
    pub revenue_scale: f64,
    pub param_mode: ParamMode,
}

/// Trains a Q-network with episodes that start from an empty board on a
/// uniformly drawn weekday.
pub fn train_policy_network(
    env: &RetailEnvironmentSpec,
    params: ParamSource,
    scaler: &SalesScaler,
    settings: &TrainingEnv,
    cfg: &DqnConfig,
    seed: u64,
) -> Result<TrainedDqn> {
    let sim_cfg = SimulatorConfig {
        horizon_days: settings.horizon_days,
        placement_cost: settings.placement_cost,
        revenue_scale: settings.revenue_scale,
        param_mode: settings.param_mode,
    };
    let mut sim = Simulator::new(env, sim_cfg, params, *scaler)?;
    let board = env.empty_board();
    dqn_train(&mut sim, |rng| (board.clone(), rng.random_range(0..DAYS_PER_WEEK)), cfg, seed)
}
