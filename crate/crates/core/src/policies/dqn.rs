//! Deep Q-learning with experience replay, a hard-synced target network and
//! linearly annealed ε-greedy exploration.

use rand::seq::index::sample as sample_indices;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{batch_matrix, Mlp, Optimizer, OptimizerKind};
use crate::retail::{feasible_actions, Action, BoardConfig, EnvState, DAYS_PER_WEEK};
use crate::sim::{Policy, Simulator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub discount: f64,
    pub learning_starts: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub training_iterations: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_fraction: f64,
    pub target_sync_interval: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
    pub log_interval: usize,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            discount: 0.2,
            learning_starts: 1500,
            batch_size: 32,
            learning_rate: 5e-4,
            training_iterations: 50_000,
            epsilon_start: 0.99,
            epsilon_end: 0.05,
            epsilon_anneal_fraction: 0.35,
            target_sync_interval: 500,
            replay_capacity: 50_000,
            hidden: vec![128, 64],
            optimizer: OptimizerKind::Adam,
            log_interval: 1000,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("dqn.discount must lie in [0, 1]");
        }
        if !(self.epsilon_anneal_fraction > 0.0 && self.epsilon_anneal_fraction <= 1.0) {
            return bad("dqn.epsilon_anneal_fraction must lie in (0, 1]");
        }
        for (name, v) in [("dqn.epsilon_start", self.epsilon_start), ("dqn.epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("dqn.batch_size must be positive and fit in the replay buffer");
        }
        if self.target_sync_interval == 0 || self.log_interval == 0 {
            return bad("dqn intervals must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("dqn.learning_rate must be positive");
        }
        Ok(())
    }
}

/// Linear interpolation from `epsilon_start` to `epsilon_end` over the first
/// `epsilon_anneal_fraction` of training, constant afterwards.
pub fn epsilon_at(iteration: usize, cfg: &DqnConfig) -> f64 {
    let anneal = cfg.epsilon_anneal_fraction * cfg.training_iterations as f64;
    let frac = if anneal > 0.0 { (iteration as f64 / anneal).min(1.0) } else { 1.0 };
    cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)
}

/// `[board | previous revenue / revenue_scale | weekday one-hot]`.
pub fn encode_state(state: &EnvState, revenue_scale: f64) -> Vec<f64> {
    let cells = state.board.cells();
    let mut out = Vec::with_capacity(2 * cells.len() + DAYS_PER_WEEK);
    out.extend(cells.iter().map(|&c| f64::from(c)));
    out.extend(state.prev_revenue.iter().map(|g| g / revenue_scale));
    out.extend((0..DAYS_PER_WEEK).map(|d| f64::from(u8::from(d == state.day_of_week))));
    out
}

/// State-action value network over the full action space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub net: Mlp,
    pub n_regions: usize,
    pub n_products: usize,
    pub revenue_scale: f64,
}

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        n_regions: usize,
        n_products: usize,
        hidden: &[usize],
        revenue_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let cells = n_regions * n_products;
        let mut sizes = vec![2 * cells + DAYS_PER_WEEK];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * cells + 1);
        Ok(Self { net: Mlp::new(&sizes, rng)?, n_regions, n_products, revenue_scale })
    }

    pub fn n_actions(&self) -> usize {
        2 * self.n_regions * self.n_products + 1
    }

    pub fn q_values(&self, state: &EnvState) -> Vec<f64> {
        self.net.forward(&encode_state(state, self.revenue_scale))
    }
}

/// Greedy feasible action; ties go to the lowest action index.
pub fn dqn_act(net: &QNetwork, state: &EnvState) -> Action {
    let q = net.q_values(state);
    let mask = feasible_mask(state);
    argmax_masked(&q, &mask)
        .and_then(|i| Action::from_index(i, net.n_regions, net.n_products))
        .unwrap_or(Action::DoNothing)
}

fn feasible_mask(state: &EnvState) -> Vec<bool> {
    let cells = state.board.cells().len();
    let k = state.board.n_products();
    let mut mask = vec![false; 2 * cells + 1];
    for a in feasible_actions(state) {
        mask[a.index(k, cells)] = true;
    }
    mask
}

fn argmax_masked(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Encoded transition as stored in the replay buffer; rewards are already
/// divided by the revenue scale.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTransition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_mask: Vec<bool>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest entry is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<StoredTransition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: Vec::with_capacity(capacity.min(1 << 16)), next: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: StoredTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Entries from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &StoredTransition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// Uniform sample without replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&StoredTransition>> {
        if batch > self.items.len() {
            return Err(Error::InvalidInput(format!("batch {batch} exceeds buffer size {}", self.items.len())));
        }
        Ok(sample_indices(rng, self.items.len(), batch).into_iter().map(|i| &self.items[i]).collect())
    }
}

/// One gradient update of `net` towards `r + discount * max_a' Q_target(s', a')`.
/// Returns the squared-error loss before the update.
pub fn dqn_train_step(
    net: &mut Mlp,
    target: &Mlp,
    batch: &[&StoredTransition],
    discount: f64,
    opt: &mut Optimizer,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let b = batch.len();
    let next_states: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let next_q = target.forward_batch(batch_matrix(&next_states));
    let next_q = next_q.output();
    let y: Vec<f64> = batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.done || discount == 0.0 {
                return t.reward;
            }
            let row: Vec<f64> = next_q.row(i).iter().copied().collect();
            let best = argmax_masked(&row, &t.next_mask).map_or(0.0, |a| row[a]);
            t.reward + discount * best
        })
        .collect();

    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let cache = net.forward_batch(batch_matrix(&states));
    let q = cache.output();
    let mut d_out = nalgebra::DMatrix::zeros(b, q.ncols());
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        let diff = q[(i, t.action)] - y[i];
        loss += diff * diff;
        d_out[(i, t.action)] = 2.0 * diff / b as f64;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("temporal-difference loss {loss}")));
    }
    let grads = net.backward(&cache, d_out);
    opt.step(net, &grads);
    Ok(loss)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    pub epsilon: f64,
    pub mean_reward: f64,
    /// Mean loss over the window; absent before learning starts.
    pub loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainedDqn {
    pub network: QNetwork,
    pub log: Vec<TrainLogRow>,
}

/// Trains against `sim`. `start` chooses the initial board and weekday of
/// each episode.
pub fn dqn_train<F>(sim: &mut Simulator, mut start: F, cfg: &DqnConfig, seed: u64) -> Result<TrainedDqn>
where
    F: FnMut(&mut ChaCha8Rng) -> (BoardConfig, usize),
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (sim.env().n_regions, sim.env().n_products);
    let scale = sim.config().revenue_scale;
    let mut q = QNetwork::new(n, k, &cfg.hidden, scale, &mut rng)?;
    let mut target = q.net.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, q.net.n_params());
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);
    let cells = n * k;

    let mut new_episode = |sim: &mut Simulator, rng: &mut ChaCha8Rng| -> Result<()> {
        let (board, day0) = start(rng);
        let episode_seed: u64 = rng.random();
        sim.reset(&board, day0, episode_seed).map(|_| ())
    };
    new_episode(sim, &mut rng)?;

    let mut log = Vec::with_capacity(cfg.training_iterations / cfg.log_interval);
    let (mut reward_sum, mut loss_sum, mut loss_count) = (0.0, 0.0, 0usize);
    for it in 0..cfg.training_iterations {
        let state = sim.state().clone();
        let eps = epsilon_at(it, cfg);
        let action = if rng.random::<f64>() < eps {
            *feasible_actions(&state).choose(&mut rng).expect("DoNothing is feasible")
        } else {
            dqn_act(&q, &state)
        };
        let t = sim.step(action)?;
        reward_sum += t.reward;
        replay.push(StoredTransition {
            state: encode_state(&state, scale),
            action: action.index(k, cells),
            reward: t.reward / scale,
            next_state: encode_state(&t.next_state, scale),
            next_mask: feasible_mask(&t.next_state),
            done: t.done,
        });

        if it >= cfg.learning_starts && replay.len() >= cfg.batch_size {
            let batch = replay.sample(cfg.batch_size, &mut rng)?;
            let loss = dqn_train_step(&mut q.net, &target, &batch, cfg.discount, &mut opt)
                .map_err(|e| Error::Diverged { iterations: it, reason: e.to_string() })?;
            loss_sum += loss;
            loss_count += 1;
        }
        if (it + 1) % cfg.target_sync_interval == 0 {
            target = q.net.clone();
        }
        if t.done {
            new_episode(sim, &mut rng)?;
        }
        if (it + 1) % cfg.log_interval == 0 {
            log.push(TrainLogRow {
                iteration: it + 1,
                epsilon: eps,
                mean_reward: reward_sum / cfg.log_interval as f64,
                loss: (loss_count > 0).then(|| loss_sum / loss_count as f64),
            });
            reward_sum = 0.0;
            loss_sum = 0.0;
            loss_count = 0;
        }
    }
    if !q.net.is_finite() {
        return Err(Error::Diverged { iterations: cfg.training_iterations, reason: "non-finite weights".into() });
    }
    Ok(TrainedDqn { network: q, log })
}

/// Greedy execution of a trained network.
#[derive(Clone, Debug)]
pub struct DqnPolicy {
    pub network: QNetwork,
}

impl Policy for DqnPolicy {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        Ok(dqn_act(&self.network, state))
    }
}
