//! Allocation policies: random, naive, tabu search and deep Q-learning.

mod dqn;
mod tabu;

pub use dqn::{
    dqn_act, dqn_train, dqn_train_step, encode_state, epsilon_at, DqnConfig, DqnPolicy, QNetwork, ReplayBuffer,
    StoredTransition, TrainLogRow, TrainedDqn,
};
pub use tabu::{expected_reward, tabu_policy, TabuPolicy, TabuState, TABU_CAPACITY};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::retail::{feasible_actions, Action, EnvState};
use crate::sim::Policy;

/// Uniform choice over the feasible actions.
pub fn random_policy<R: Rng + ?Sized>(state: &EnvState, rng: &mut R) -> Action {
    *feasible_actions(state).choose(rng).expect("DoNothing is always feasible")
}

/// Never changes the board.
pub fn naive_policy(_state: &EnvState) -> Action {
    Action::DoNothing
}

pub struct RandomPolicy {
    pub rng: ChaCha8Rng,
}

impl Policy for RandomPolicy {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        Ok(random_policy(state, &mut self.rng))
    }
}

pub struct NaivePolicy;

impl Policy for NaivePolicy {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        Ok(naive_policy(state))
    }
}
