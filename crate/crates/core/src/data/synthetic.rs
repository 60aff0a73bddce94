//! Synthetic stores simulated forward from known demand parameters.

use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::io::{write_placements, write_sales};
use super::records::{day_of_week, Dataset, PlacementRecord, SalesRecord};
use crate::error::{Error, Result};
use crate::features::{fit_scaler, lagged_rows, SalesScaler};
use crate::model::{sample_prior, Hyperparams, ModelParams};
use crate::retail::{validate_environment, Action, BoardConfig, RetailEnvironmentSpec};
use crate::sim::{ParamMode, ParamSource, Simulator, SimulatorConfig};

/// Feedback gain above which a prior draw is rejected as explosive.
const MAX_FEEDBACK_GAIN: f64 = 0.9;
const MAX_PRIOR_TRIES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoardSchedule {
    Static,
    /// Each day, with probability `change_prob`, one uniformly chosen cell is toggled.
    RandomWalk {
        change_prob: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSource {
    Prior,
    Explicit { params: Box<ModelParams> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_regions: usize,
    pub n_products: usize,
    pub horizon_days: usize,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub prices: Vec<f64>,
    pub placement_cost: f64,
    pub hierarchical: bool,
    pub truth: TruthSource,
    pub schedule: BoardSchedule,
    /// Probability that a cell starts occupied; ignored when `initial_board` is set.
    pub initial_occupancy: f64,
    pub initial_board: Option<BoardConfig>,
}

/// `2, 3.5, 5, ...` cycling every five products.
pub fn default_prices(k: usize) -> Vec<f64> {
    (0..k).map(|j| 2.0 + 1.5 * (j % 5) as f64).collect()
}

impl SyntheticSpec {
    /// Six regions, five products, one year from 2018-08-01.
    pub fn default_store(seed: u64) -> Self {
        Self::small(6, 5, 365, seed)
    }

    pub fn small(n_regions: usize, n_products: usize, horizon_days: usize, seed: u64) -> Self {
        Self {
            n_regions,
            n_products,
            horizon_days,
            seed,
            start_date: NaiveDate::from_ymd_opt(2018, 8, 1).expect("valid date"),
            prices: default_prices(n_products),
            placement_cost: 1.0,
            hierarchical: false,
            truth: TruthSource::Prior,
            schedule: BoardSchedule::RandomWalk { change_prob: 0.3 },
            initial_occupancy: 0.5,
            initial_board: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_days < 2 {
            return Err(Error::InvalidInput("synthetic horizon must be at least 2 days".into()));
        }
        if self.prices.len() != self.n_products {
            return Err(Error::DimensionMismatch(format!(
                "{} prices for {} products",
                self.prices.len(),
                self.n_products
            )));
        }
        if !(0.0..=1.0).contains(&self.initial_occupancy) {
            return Err(Error::InvalidInput("initial_occupancy must lie in [0, 1]".into()));
        }
        if let BoardSchedule::RandomWalk { change_prob } = self.schedule {
            if !(0.0..=1.0).contains(&change_prob) {
                return Err(Error::InvalidInput("change_prob must lie in [0, 1]".into()));
            }
        }
        if let Some(b) = &self.initial_board {
            if b.n_regions() != self.n_regions || b.n_products() != self.n_products {
                return Err(Error::DimensionMismatch("initial board does not match the store".into()));
            }
        }
        Ok(())
    }

    pub fn environment(&self) -> Result<RetailEnvironmentSpec> {
        validate_environment(RetailEnvironmentSpec::with_line_adjacency(
            self.prices.clone(),
            self.n_regions,
            self.placement_cost,
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub env: RetailEnvironmentSpec,
    pub truth: ModelParams,
    /// Scaler of the lagged-revenue feature under which `truth` was simulated.
    pub truth_scaler: SalesScaler,
    pub dataset: Dataset,
}

/// Store description written next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvFile {
    pub environment: RetailEnvironmentSpec,
    pub truth_scaler: Option<SalesScaler>,
    pub start_date: Option<NaiveDate>,
}

/// Largest one-day amplification of a revenue shock through the lag feature.
pub fn feedback_gain(params: &ModelParams, env: &RetailEnvironmentSpec, scaler: &SalesScaler) -> f64 {
    let max_price = env.prices.iter().fold(0.0f64, |m, p| m.max(*p));
    params.w_s * env.n_regions as f64 * max_price / scaler.std
}

fn simulate(
    env: &RetailEnvironmentSpec,
    spec: &SyntheticSpec,
    params: &ModelParams,
    scaler: &SalesScaler,
    board0: &BoardConfig,
    actions: &[Action],
    sim_seed: u64,
) -> Result<Dataset> {
    let cfg = SimulatorConfig {
        horizon_days: spec.horizon_days,
        placement_cost: spec.placement_cost,
        revenue_scale: 1.0,
        param_mode: ParamMode::FixedTruth,
    };
    let mut sim = Simulator::new(env, cfg, ParamSource::fixed(params.clone()), *scaler)?;
    sim.reset(board0, day_of_week(spec.start_date), sim_seed)?;
    let mut data = Dataset::default();
    let k = env.n_products;
    for (d, &a) in actions.iter().enumerate() {
        let t = sim.step(a)?;
        let date = spec.start_date + Days::new(d as u64);
        for (i, j) in t.next_state.board.occupied() {
            data.sales.push(SalesRecord {
                date,
                region_id: i,
                product_id: j,
                quantity: t.quantities[i * k + j],
                price: env.prices[j],
            });
            data.placements.push(PlacementRecord { date, region_id: i, product_id: j });
        }
    }
    Ok(data)
}

fn lag_scaler(data: &Dataset, env: &RetailEnvironmentSpec) -> Result<SalesScaler> {
    let rows = lagged_rows(&data.sales, env)?;
    let values: Vec<f64> = rows.iter().map(|r| r.index.prev_product_revenue).collect();
    if values.len() < 2 {
        return Ok(SalesScaler { mean: values.first().copied().unwrap_or(0.0), std: 1.0 });
    }
    let s = fit_scaler(&values)?;
    Ok(if s.std < 1e-6 { SalesScaler { std: 1.0, ..s } } else { s })
}

/// Draws (or takes) ground truth and simulates the store forward under the
/// board schedule.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let env = spec.environment()?;
    let (n, k) = (spec.n_regions, spec.n_products);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let board0 = match &spec.initial_board {
        Some(b) => b.clone(),
        None => {
            let mut b = BoardConfig::empty(n, k);
            for i in 0..n {
                for j in 0..k {
                    b.set(i, j, rng.random::<f64>() < spec.initial_occupancy);
                }
            }
            b
        }
    };
    let mut board = board0.clone();
    let mut actions = Vec::with_capacity(spec.horizon_days);
    for _ in 0..spec.horizon_days {
        let a = match spec.schedule {
            BoardSchedule::Static => Action::DoNothing,
            BoardSchedule::RandomWalk { change_prob } => {
                if rng.random::<f64>() < change_prob {
                    let c = rng.random_range(0..n * k);
                    let (region, product) = (c / k, c % k);
                    if board.get(region, product) {
                        Action::Remove { region, product }
                    } else {
                        Action::Place { region, product }
                    }
                } else {
                    Action::DoNothing
                }
            }
        };
        if let Action::Place { region, product } = a {
            board.set(region, product, true);
        }
        if let Action::Remove { region, product } = a {
            board.set(region, product, false);
        }
        actions.push(a);
    }
    let sim_seed: u64 = rng.random();

    let hyper = Hyperparams::defaults(n, k);
    let (truth, truth_scaler) = match &spec.truth {
        TruthSource::Explicit { params } => {
            let mut pilot = (**params).clone();
            pilot.w_s = 0.0;
            let scaler = lag_scaler(
                &simulate(&env, spec, &pilot, &SalesScaler { mean: 0.0, std: 1.0 }, &board0, &actions, sim_seed)?,
                &env,
            )?;
            ((**params).clone(), scaler)
        }
        TruthSource::Prior => {
            let mut found = None;
            for _ in 0..MAX_PRIOR_TRIES {
                let params = sample_prior(&hyper, spec.hierarchical, &mut rng);
                let mut pilot = params.clone();
                pilot.w_s = 0.0;
                let unit = SalesScaler { mean: 0.0, std: 1.0 };
                let scaler = lag_scaler(&simulate(&env, spec, &pilot, &unit, &board0, &actions, sim_seed)?, &env)?;
                if feedback_gain(&params, &env, &scaler) < MAX_FEEDBACK_GAIN {
                    found = Some((params, scaler));
                    break;
                }
            }
            found.ok_or_else(|| Error::InvalidInput("no stable prior draw found".into()))?
        }
    };
    if truth.n_regions() != n || truth.n_products() != k {
        return Err(Error::DimensionMismatch("explicit truth does not match the store".into()));
    }
    let dataset = simulate(&env, spec, &truth, &truth_scaler, &board0, &actions, sim_seed)?;
    Ok(SyntheticData { env, truth, truth_scaler, dataset })
}

pub const SALES_FILE: &str = "sales.csv";
pub const PLACEMENTS_FILE: &str = "placements.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const ENV_FILE: &str = "env.json";

/// Writes the sales, placements, truth and environment files into `dir`.
pub fn write_synthetic(data: &SyntheticData, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths = [dir.join(SALES_FILE), dir.join(PLACEMENTS_FILE), dir.join(TRUTH_FILE), dir.join(ENV_FILE)];
    write_sales(&paths[0], &data.dataset.sales)?;
    write_placements(&paths[1], &data.dataset.placements)?;
    std::fs::write(&paths[2], serde_json::to_string_pretty(&data.truth)? + "\n")?;
    let env_file = EnvFile {
        environment: data.env.clone(),
        truth_scaler: Some(data.truth_scaler),
        start_date: data.dataset.sales.first().map(|r| r.date),
    };
    std::fs::write(&paths[3], serde_json::to_string_pretty(&env_file)? + "\n")?;
    Ok(paths.to_vec())
}

pub fn read_env_file(path: &Path) -> Result<EnvFile> {
    let text = std::fs::read_to_string(path)?;
    let f: EnvFile = serde_json::from_str(&text)?;
    validate_environment(f.environment.clone())?;
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_days_one_static_cell_gives_two_rows() {
        let mut spec = SyntheticSpec::small(1, 1, 2, 3);
        let mut board = BoardConfig::empty(1, 1);
        board.set(0, 0, true);
        spec.initial_board = Some(board);
        spec.schedule = BoardSchedule::Static;
        let d = generate_synthetic(&spec).unwrap();
        assert_eq!(d.dataset.sales.len(), 2);
        assert_eq!(d.dataset.placements.len(), 2);
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::small(2, 2, 30, 11);
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn horizon_below_two_rejected() {
        assert!(generate_synthetic(&SyntheticSpec::small(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn prior_truth_is_stable() {
        for seed in 0..5 {
            let d = generate_synthetic(&SyntheticSpec::small(3, 2, 40, seed)).unwrap();
            assert!(feedback_gain(&d.truth, &d.env, &d.truth_scaler) < MAX_FEEDBACK_GAIN);
            assert!(d.dataset.sales.iter().all(|r| r.quantity.is_finite() && r.quantity >= 0.0));
        }
    }
}
