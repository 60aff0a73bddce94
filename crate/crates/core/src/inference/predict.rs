use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nuts::PosteriorDraws;
use crate::error::{Error, Result};
use crate::features::DesignMatrix;
use crate::model::{sample_trunc_normal, unpack, ModelParams, ParamLayout};
use crate::retail::RetailEnvironmentSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowPrediction {
    pub date: NaiveDate,
    pub region: usize,
    pub product: usize,
    pub observed: f64,
    pub revenue: IntervalSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyPrediction {
    pub date: NaiveDate,
    pub observed: f64,
    pub revenue: IntervalSummary,
}

/// Posterior-predictive revenue per row and per store-day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub rows: Vec<RowPrediction>,
    pub daily: Vec<DailyPrediction>,
    pub n_draws: usize,
}

impl PredictionSummary {
    pub fn point_estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.revenue.mean).collect()
    }

    /// Fraction of rows whose observed revenue lies inside the interval.
    pub fn coverage(&self) -> f64 {
        let inside =
            self.rows.iter().filter(|r| r.observed >= r.revenue.lower && r.observed <= r.revenue.upper).count();
        inside as f64 / self.rows.len().max(1) as f64
    }
}

/// Evenly spaced indices of at most `max` draws out of `total`.
pub fn thin_indices(total: usize, max: usize) -> Vec<usize> {
    if total <= max {
        return (0..total).collect();
    }
    (0..max).map(|i| i * total / max).collect()
}

/// Empirical quantile with linear interpolation on a sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn summarize(mut samples: Vec<f64>) -> IntervalSummary {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    IntervalSummary { mean, lower: quantile_sorted(&samples, 0.025), upper: quantile_sorted(&samples, 0.975) }
}

/// Predictive revenue for every row of `dm` from a set of parameter draws.
pub fn predict_revenue_params(
    params: &[ModelParams],
    dm: &DesignMatrix,
    env: &RetailEnvironmentSpec,
    seed: u64,
) -> Result<PredictionSummary> {
    if params.is_empty() {
        return Err(Error::InvalidInput("no parameter draws to predict from".into()));
    }
    for r in &dm.rows {
        if r.region >= env.n_regions || r.product >= env.n_products {
            return Err(Error::OutOfRange(format!("row references region {} product {}", r.region, r.product)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Vec<Vec<f64>>> =
        params.iter().map(|p| (0..env.n_products).map(|j| p.weight_vector(j)).collect()).collect();
    let prices = dm.prices_per_row(env);
    let n_rows = dm.n_rows();
    let s = params.len();
    // revenue[row][draw]
    let mut revenue = vec![vec![0.0; s]; n_rows];
    for (d, p) in params.iter().enumerate() {
        for r in 0..n_rows {
            let w = &weights[d][dm.rows[r].product];
            let mu = dm.row(r).iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + p.b;
            revenue[r][d] = sample_trunc_normal(mu, p.sigma_q, &mut rng) * prices[r];
        }
    }

    let mut rows = Vec::with_capacity(n_rows);
    let mut daily: Vec<DailyPrediction> = Vec::new();
    let mut day_draws = vec![0.0; s];
    let mut day_observed = 0.0;
    for r in 0..n_rows {
        let idx = &dm.rows[r];
        let observed = dm.y[r] * prices[r];
        rows.push(RowPrediction {
            date: idx.date,
            region: idx.region,
            product: idx.product,
            observed,
            revenue: summarize(revenue[r].clone()),
        });
        for (a, v) in day_draws.iter_mut().zip(&revenue[r]) {
            *a += v;
        }
        day_observed += observed;
        let last_of_day = r + 1 == n_rows || dm.rows[r + 1].date != idx.date;
        if last_of_day {
            daily.push(DailyPrediction {
                date: idx.date,
                observed: day_observed,
                revenue: summarize(std::mem::replace(&mut day_draws, vec![0.0; s])),
            });
            day_observed = 0.0;
        }
    }
    Ok(PredictionSummary { rows, daily, n_draws: s })
}

/// Thins the posterior to at most `max_draws` evenly spaced draws and predicts.
pub fn predict_revenue(
    draws: &PosteriorDraws,
    layout: &ParamLayout,
    dm: &DesignMatrix,
    env: &RetailEnvironmentSpec,
    max_draws: usize,
    seed: u64,
) -> Result<PredictionSummary> {
    let params = thin_indices(draws.n_draws(), max_draws)
        .into_iter()
        .map(|s| unpack(draws.draw(s), layout).map(|(p, _)| p))
        .collect::<Result<Vec<_>>>()?;
    predict_revenue_params(&params, dm, env, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thinning_is_even_and_bounded() {
        assert_eq!(thin_indices(5, 10), vec![0, 1, 2, 3, 4]);
        let t = thin_indices(20_000, 500);
        assert_eq!(t.len(), 500);
        assert_eq!(t[1] - t[0], 40);
        assert!(*t.last().unwrap() < 20_000);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert!((quantile_sorted(&v, 0.1) - 1.4).abs() < 1e-12);
    }
}
