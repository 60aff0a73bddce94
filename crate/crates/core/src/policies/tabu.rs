use std::collections::VecDeque;

use crate::error::Result;
use crate::features::SalesScaler;
use crate::model::{trunc_normal_mean, ModelParams};
use crate::retail::{apply_action, feasible_actions, Action, EnvState, RetailEnvironmentSpec};
use crate::sim::Policy;

pub const TABU_CAPACITY: usize = 50;

/// FIFO memory of recently chosen actions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TabuState {
    list: VecDeque<Action>,
    capacity: usize,
}

impl Default for TabuState {
    fn default() -> Self {
        Self::with_capacity(TABU_CAPACITY)
    }
}

impl TabuState {
    pub fn with_capacity(capacity: usize) -> Self {
        Self { list: VecDeque::with_capacity(capacity + 1), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn contains(&self, action: &Action) -> bool {
        self.list.contains(action)
    }

    /// Appends, evicting the oldest entry once full.
    pub fn push(&mut self, action: Action) {
        if self.capacity == 0 {
            return;
        }
        if self.list.len() == self.capacity {
            self.list.pop_front();
        }
        self.list.push_back(action);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.list.iter()
    }
}

/// Expected reward of taking `action` in `state`: truncated-normal mean
/// quantity times price over the occupied cells of the next board, minus the
/// placement cost of its occupied regions.
pub fn expected_reward(
    env: &RetailEnvironmentSpec,
    params: &ModelParams,
    scaler: &SalesScaler,
    state: &EnvState,
    action: Action,
) -> Result<f64> {
    let board = apply_action(&state.board, action)?;
    let mut total = 0.0;
    for (i, j) in board.occupied() {
        let prev = scaler.scale(state.prev_product_revenue(j));
        let mu = params.linear_predictor(state.day_of_week, i, j, prev);
        total += trunc_normal_mean(mu, params.sigma_q) * env.prices[j];
    }
    Ok(total - env.placement_cost * board.occupied_regions() as f64)
}

/// Best non-tabu feasible action under `evaluator`; ties go to the lowest
/// action index. The choice is appended to the tabu list.
pub fn tabu_policy(state: &EnvState, tabu: &mut TabuState, mut evaluator: impl FnMut(Action) -> f64) -> Action {
    let k = state.board.n_products();
    let cells = state.board.cells().len();
    let mut best: Option<(usize, f64, Action)> = None;
    for a in feasible_actions(state) {
        if a != Action::DoNothing && tabu.contains(&a) {
            continue;
        }
        let v = evaluator(a);
        let idx = a.index(k, cells);
        let better = match best {
            None => true,
            Some((bi, bv, _)) => v > bv || (v == bv && idx < bi),
        };
        if better {
            best = Some((idx, v, a));
        }
    }
    let chosen = best.map_or(Action::DoNothing, |b| b.2);
    tabu.push(chosen);
    chosen
}

/// Tabu search driven by the expected one-step reward of a fixed parameter set.
#[derive(Clone, Debug)]
pub struct TabuPolicy {
    pub tabu: TabuState,
    pub env: RetailEnvironmentSpec,
    pub params: ModelParams,
    pub scaler: SalesScaler,
}

impl TabuPolicy {
    pub fn new(env: RetailEnvironmentSpec, params: ModelParams, scaler: SalesScaler) -> Self {
        Self { tabu: TabuState::default(), env, params, scaler }
    }
}

impl Policy for TabuPolicy {
    fn act(&mut self, state: &EnvState) -> Result<Action> {
        let (env, params, scaler) = (&self.env, &self.params, &self.scaler);
        Ok(tabu_policy(state, &mut self.tabu, |a| {
            expected_reward(env, params, scaler, state, a).unwrap_or(f64::NEG_INFINITY)
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retail::BoardConfig;

    fn place(r: usize, p: usize) -> Action {
        Action::Place { region: r, product: p }
    }

    fn scores(a: Action) -> f64 {
        match a {
            Action::Place { region: 0, product: 0 } => 5.0,
            Action::Place { region: 0, product: 1 } => 3.0,
            _ => 0.0,
        }
    }

    #[test]
    fn picks_highest_expected_reward() {
        let state = EnvState::new(BoardConfig::empty(1, 2), 0).unwrap();
        let mut tabu = TabuState::default();
        assert_eq!(tabu_policy(&state, &mut tabu, scores), place(0, 0));
        assert_eq!(tabu.len(), 1);
    }

    #[test]
    fn tabu_best_falls_back_to_second() {
        let state = EnvState::new(BoardConfig::empty(1, 2), 0).unwrap();
        let mut tabu = TabuState::default();
        tabu.push(place(0, 0));
        assert_eq!(tabu_policy(&state, &mut tabu, scores), place(0, 1));
    }

    #[test]
    fn first_action_admissible_after_capacity_steps() {
        let state = EnvState::new(BoardConfig::empty(1, 2), 0).unwrap();
        let mut tabu = TabuState::default();
        tabu.push(place(0, 0));
        for _ in 0..TABU_CAPACITY - 1 {
            tabu.push(Action::DoNothing);
        }
        assert!(tabu.contains(&place(0, 0)));
        tabu.push(Action::DoNothing);
        assert!(!tabu.contains(&place(0, 0)));
        assert_eq!(tabu.len(), TABU_CAPACITY);
        assert_eq!(tabu_policy(&state, &mut tabu, scores), place(0, 0));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let state = EnvState::new(BoardConfig::full(1, 2), 0).unwrap();
        let mut tabu = TabuState::default();
        assert_eq!(tabu_policy(&state, &mut tabu, |_| 1.0), Action::DoNothing);
    }

    #[test]
    fn all_tabu_still_allows_do_nothing() {
        let state = EnvState::new(BoardConfig::empty(1, 1), 0).unwrap();
        let mut tabu = TabuState::default();
        tabu.push(place(0, 0));
        assert_eq!(tabu_policy(&state, &mut tabu, |_| -1.0), Action::DoNothing);
    }
}
