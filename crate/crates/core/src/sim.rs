//! The allocation MDP with transitions sampled from the demand model.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::SalesScaler;
use crate::model::{sample_trunc_normal, ModelParams};
use crate::retail::{advance_day, apply_action, reward, Action, BoardConfig, EnvState, RetailEnvironmentSpec};

/// Where the per-step demand parameters come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamMode {
    /// A uniformly chosen posterior draw every step.
    PosteriorDraw,
    /// The single posterior-mean parameter set.
    PosteriorMean,
    /// A fixed, known parameter set.
    FixedTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulatorConfig {
    pub horizon_days: usize,
    pub placement_cost: f64,
    pub revenue_scale: f64,
    pub param_mode: ParamMode,
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon_days == 0 {
            return Err(Error::InvalidInput("horizon must be at least one day".into()));
        }
        if !(self.revenue_scale > 0.0 && self.revenue_scale.is_finite()) {
            return Err(Error::InvalidInput(format!("revenue_scale must be positive, got {}", self.revenue_scale)));
        }
        if !(self.placement_cost >= 0.0 && self.placement_cost.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid placement cost {}", self.placement_cost)));
        }
        Ok(())
    }
}

/// Parameter sets available to a simulator. Cheap to clone.
#[derive(Clone, Debug)]
pub struct ParamSource {
    draws: Arc<Vec<ModelParams>>,
    mean: Option<Arc<ModelParams>>,
}

impl ParamSource {
    pub fn fixed(params: ModelParams) -> Self {
        let p = Arc::new(params);
        Self { draws: Arc::new(Vec::new()), mean: Some(p) }
    }

    pub fn posterior(draws: Vec<ModelParams>, mean: ModelParams) -> Self {
        Self { draws: Arc::new(draws), mean: Some(Arc::new(mean)) }
    }

    pub fn draws(&self) -> &[ModelParams] {
        &self.draws
    }

    pub fn single(&self) -> Option<&ModelParams> {
        self.mean.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: Action,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    /// Realized row-major quantities, zero at unoccupied cells.
    pub quantities: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub total_reward: f64,
}

/// Compact per-transition record for JSON-lines export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub epoch_day: usize,
    pub day_of_week: usize,
    pub state_digest: String,
    pub next_state_digest: String,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

/// Short hex digest of the board, weekday and previous revenue.
pub fn state_digest(state: &EnvState) -> String {
    let mut h = Sha256::new();
    h.update(state.board.cells());
    h.update([state.day_of_week as u8]);
    for v in &state.prev_revenue {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

impl Trajectory {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.transitions {
            let rec = TransitionRecord {
                epoch_day: t.state.epoch_day,
                day_of_week: t.state.day_of_week,
                state_digest: state_digest(&t.state),
                next_state_digest: state_digest(&t.next_state),
                action: t.action,
                reward: t.reward,
                done: t.done,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One simulated store.
#[derive(Clone, Debug)]
pub struct Simulator {
    env: RetailEnvironmentSpec,
    config: SimulatorConfig,
    params: ParamSource,
    scaler: SalesScaler,
    state: EnvState,
    seed: u64,
}

impl Simulator {
    /// The environment's placement cost is replaced by the configured one.
    pub fn new(
        env: &RetailEnvironmentSpec,
        config: SimulatorConfig,
        params: ParamSource,
        scaler: SalesScaler,
    ) -> Result<Self> {
        config.validate()?;
        match config.param_mode {
            ParamMode::PosteriorDraw if params.draws().is_empty() => {
                return Err(Error::InvalidInput("posterior-draw mode needs at least one draw".into()));
            }
            ParamMode::PosteriorMean | ParamMode::FixedTruth if params.single().is_none() => {
                return Err(Error::InvalidInput("no parameter set supplied".into()));
            }
            _ => {}
        }
        let check = |p: &ModelParams| {
            if p.n_regions() != env.n_regions || p.n_products() != env.n_products {
                Err(Error::DimensionMismatch("parameters do not match the environment".into()))
            } else {
                Ok(())
            }
        };
        params.draws().iter().try_for_each(check)?;
        params.single().map(check).transpose()?;
        let mut env = env.clone();
        env.placement_cost = config.placement_cost;
        let state = EnvState::new(env.empty_board(), 0)?;
        Ok(Self { env, config, params, scaler, state, seed: 0 })
    }

    pub fn env(&self) -> &RetailEnvironmentSpec {
        &self.env
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn reset(&mut self, init_board: &BoardConfig, day0: usize, seed: u64) -> Result<EnvState> {
        if !init_board.matches(&self.env) {
            return Err(Error::DimensionMismatch("initial board does not match the environment".into()));
        }
        self.state = EnvState::new(init_board.clone(), day0)?;
        self.seed = seed;
        Ok(self.state.clone())
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch_day >= self.config.horizon_days
    }

    /// Randomness of one day depends only on the seed and the day counter, so
    /// different policies see common random numbers.
    fn day_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.state.epoch_day as u64);
        rng
    }

    pub fn step(&mut self, action: Action) -> Result<Transition> {
        if self.is_done() {
            return Err(Error::InvalidInput("episode already finished; call reset".into()));
        }
        if !action.is_feasible(&self.state.board) {
            return Err(Error::InfeasibleAction { action: action.to_string() });
        }
        let board = apply_action(&self.state.board, action)?;
        let mut day_rng = self.day_rng();
        let draw_idx: usize = day_rng.random_range(0..self.params.draws().len().max(1));
        let params = match self.config.param_mode {
            ParamMode::PosteriorDraw => &self.params.draws()[draw_idx],
            _ => self.params.single().expect("checked at construction"),
        };
        let (n, k) = (self.env.n_regions, self.env.n_products);
        let prev: Vec<f64> = (0..k).map(|j| self.scaler.scale(self.state.prev_product_revenue(j))).collect();
        let mut quantities = vec![0.0; n * k];
        let mut revenue = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let sub_seed: u64 = day_rng.random();
                if !board.get(i, j) {
                    continue;
                }
                let mut cell_rng = ChaCha8Rng::seed_from_u64(sub_seed);
                let mu = params.linear_predictor(self.state.day_of_week, i, j, prev[j]);
                let q = sample_trunc_normal(mu, params.sigma_q, &mut cell_rng);
                quantities[i * k + j] = q;
                revenue[i * k + j] = q * self.env.prices[j];
            }
        }
        let r = reward(&self.env, &board, &quantities)?;
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward at day {}", self.state.epoch_day)));
        }
        let next = EnvState {
            board,
            day_of_week: advance_day(self.state.day_of_week)?,
            prev_revenue: revenue,
            epoch_day: self.state.epoch_day + 1,
        };
        let state = std::mem::replace(&mut self.state, next);
        Ok(Transition {
            done: state.epoch_day + 1 == self.config.horizon_days,
            state,
            action,
            reward: r,
            next_state: self.state.clone(),
            quantities,
        })
    }
}

/// Anything that maps a state to an action.
pub trait Policy {
    fn act(&mut self, state: &EnvState) -> Result<Action>;
}

impl<F: FnMut(&EnvState) -> Result<Action>> Policy for F {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        self(state)
    }
}

/// Runs one full episode from a reset.
pub fn rollout<P: Policy + ?Sized>(
    sim: &mut Simulator,
    policy: &mut P,
    init_board: &BoardConfig,
    day0: usize,
    seed: u64,
) -> Result<Trajectory> {
    sim.reset(init_board, day0, seed)?;
    let mut traj = Trajectory::default();
    while !sim.is_done() {
        let state = sim.state().clone();
        let action = policy.act(&state)?;
        let t = sim.step(action).map_err(|e| match e {
            Error::InfeasibleAction { action } => {
                Error::InfeasibleAction { action: format!("{action} at epoch day {}", state.epoch_day) }
            }
            other => other,
        })?;
        traj.total_reward += t.reward;
        traj.transitions.push(t);
    }
    Ok(traj)
}
