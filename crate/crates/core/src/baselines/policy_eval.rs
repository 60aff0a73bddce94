use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::SalesScaler;
use crate::model::ModelParams;
use crate::policies::{DqnPolicy, NaivePolicy, QNetwork, RandomPolicy, TabuPolicy};
use crate::retail::{BoardConfig, RetailEnvironmentSpec, DAYS_PER_WEEK};
use crate::sim::{rollout, ParamMode, ParamSource, Policy, Simulator, SimulatorConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Naive,
    Tabu,
    Dqn,
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Naive => "naive",
            Self::Tabu => "tabu",
            Self::Dqn => "dqn",
        })
    }
}

/// Everything needed to instantiate the compared policies.
#[derive(Clone, Debug)]
pub struct PolicySuite {
    /// Parameters behind the tabu evaluator (normally the posterior mean).
    pub tabu_params: ModelParams,
    pub qnet: Option<QNetwork>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalConfig {
    pub lengths: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub placement_cost: f64,
    pub revenue_scale: f64,
    pub param_mode: ParamMode,
    /// Shared starting board; empty when absent.
    pub init_board: Option<BoardConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalRow {
    pub policy: PolicyKind,
    pub length: usize,
    pub seed: usize,
    pub cumulative_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySummaryRow {
    pub policy: PolicyKind,
    pub length: usize,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvalTable {
    pub rows: Vec<PolicyEvalRow>,
    pub summary: Vec<PolicySummaryRow>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl PolicyEvalTable {
    pub fn median_of(&self, policy: PolicyKind, length: usize) -> Option<f64> {
        self.summary.iter().find(|s| s.policy == policy && s.length == length).map(|s| s.median)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["policy", "length", "seed", "cumulative_reward"])?;
        for r in &self.rows {
            out.write_record([
                r.policy.to_string(),
                r.length.to_string(),
                r.seed.to_string(),
                r.cumulative_reward.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["policy", "length", "median"])?;
        for r in &self.summary {
            out.write_record([r.policy.to_string(), r.length.to_string(), r.median.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Episode seed and starting weekday of one (length, seed) cell, shared by
/// every policy so comparisons are paired.
fn cell_start(base_seed: u64, length: usize, seed: usize) -> (u64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(((length as u64) << 32) | seed as u64);
    (rng.random(), rng.random_range(0..DAYS_PER_WEEK))
}

/// Rolls out each policy on each (length, seed) cell and reports the
/// cumulative rewards with per-(policy, length) medians.
pub fn evaluate_policies(
    env: &RetailEnvironmentSpec,
    params: &ParamSource,
    scaler: &SalesScaler,
    suite: &PolicySuite,
    policies: &[PolicyKind],
    cfg: &PolicyEvalConfig,
) -> Result<PolicyEvalTable> {
    let board = cfg.init_board.clone().unwrap_or_else(|| env.empty_board());
    let mut cells = Vec::new();
    for &length in &cfg.lengths {
        for seed in 0..cfg.seeds {
            for &policy in policies {
                cells.push((policy, length, seed));
            }
        }
    }
    let rows = cells
        .par_iter()
        .map(|&(policy, length, seed)| {
            let sim_cfg = SimulatorConfig {
                horizon_days: length,
                placement_cost: cfg.placement_cost,
                revenue_scale: cfg.revenue_scale,
                param_mode: cfg.param_mode,
            };
            let mut sim = Simulator::new(env, sim_cfg, params.clone(), *scaler)?;
            let sim_env = sim.env().clone();
            let (episode_seed, day0) = cell_start(cfg.base_seed, length, seed);
            let mut agent: Box<dyn Policy> = match policy {
                PolicyKind::Random => Box::new(RandomPolicy { rng: ChaCha8Rng::seed_from_u64(episode_seed ^ 0x7a11) }),
                PolicyKind::Naive => Box::new(NaivePolicy),
                PolicyKind::Tabu => Box::new(TabuPolicy::new(sim_env, suite.tabu_params.clone(), *scaler)),
                PolicyKind::Dqn => {
                    let network = suite
                        .qnet
                        .clone()
                        .ok_or_else(|| crate::Error::InvalidInput("dqn policy requested without a network".into()))?;
                    Box::new(DqnPolicy { network })
                }
            };
            let traj = rollout(&mut sim, agent.as_mut(), &board, day0, episode_seed)?;
            Ok(PolicyEvalRow { policy, length, seed, cumulative_reward: traj.total_reward })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = Vec::new();
    for &length in &cfg.lengths {
        for &policy in policies {
            let v: Vec<f64> =
                rows.iter().filter(|r| r.policy == policy && r.length == length).map(|r| r.cumulative_reward).collect();
            if let Some(median) = median(&v) {
                summary.push(PolicySummaryRow { policy, length, median });
            }
        }
    }
    Ok(PolicyEvalTable { rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn cell_starts_differ_by_seed_and_length() {
        assert_ne!(cell_start(1, 30, 0), cell_start(1, 30, 1));
        assert_ne!(cell_start(1, 30, 0).0, cell_start(1, 60, 0).0);
        assert_eq!(cell_start(1, 30, 2), cell_start(1, 30, 2));
    }
}
