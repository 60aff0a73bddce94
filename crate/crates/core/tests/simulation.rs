use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shelfsim::data::{read_posterior, read_qnet, write_posterior, write_qnet, PosteriorHeader};
use shelfsim::features::SalesScaler;
use shelfsim::inference::{nuts_sample, GaussianTarget, NutsConfig};
use shelfsim::model::{sample_prior, trunc_normal_mean, Hyperparams, ModelParams};
use shelfsim::policies::{expected_reward, QNetwork};
use shelfsim::retail::{apply_action, feasible_actions, Action, BoardConfig, EnvState, RetailEnvironmentSpec};
use shelfsim::sim::{rollout, ParamMode, ParamSource, Simulator, SimulatorConfig};

fn store(n: usize, k: usize) -> (RetailEnvironmentSpec, ModelParams) {
    let env = RetailEnvironmentSpec::with_line_adjacency((0..k).map(|j| 2.0 + j as f64).collect(), n, 1.5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = sample_prior(&Hyperparams::defaults(n, k), false, &mut rng);
    (env, p)
}

fn simulator(env: &RetailEnvironmentSpec, p: &ModelParams, horizon: usize) -> Simulator {
    let cfg = SimulatorConfig {
        horizon_days: horizon,
        placement_cost: 1.5,
        revenue_scale: 10.0,
        param_mode: ParamMode::FixedTruth,
    };
    Simulator::new(env, cfg, ParamSource::fixed(p.clone()), SalesScaler { mean: 3.0, std: 2.0 }).unwrap()
}

fn board_from_bits(n: usize, k: usize, bits: &[bool]) -> BoardConfig {
    let mut b = BoardConfig::empty(n, k);
    for i in 0..n {
        for j in 0..k {
            b.set(i, j, bits[i * k + j]);
        }
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reward_is_revenue_minus_region_cost(bits in proptest::collection::vec(any::<bool>(), 6), day in 0usize..7, seed in any::<u64>()) {
        let (env, p) = store(3, 2);
        let mut sim = simulator(&env, &p, 5);
        let board = board_from_bits(3, 2, &bits);
        sim.reset(&board, day, seed).unwrap();
        let t = sim.step(Action::DoNothing).unwrap();
        let revenue: f64 = t.quantities.iter().enumerate().map(|(c, q)| q * env.prices[c % 2]).sum();
        let regions = (0..3).filter(|&i| board.get(i, 0) || board.get(i, 1)).count();
        prop_assert!((t.reward - (revenue - 1.5 * regions as f64)).abs() < 1e-9);
        for c in 0..6 {
            prop_assert!(t.quantities[c] >= 0.0);
            if !bits[c] {
                prop_assert_eq!(t.quantities[c], 0.0);
            }
        }
        prop_assert_eq!(t.next_state.day_of_week, (day + 1) % 7);
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), day in 0usize..7) {
        let (env, p) = store(2, 3);
        let mut a = simulator(&env, &p, 12);
        let mut b = simulator(&env, &p, 12);
        let mut pol = |s: &EnvState| -> shelfsim::Result<Action> { Ok(*feasible_actions(s).last().unwrap()) };
        let ta = rollout(&mut a, &mut pol, &env.empty_board(), day, seed).unwrap();
        let tb = rollout(&mut b, &mut pol, &env.empty_board(), day, seed).unwrap();
        prop_assert_eq!(ta, tb);
    }

    #[test]
    fn place_then_remove_restores_board(bits in proptest::collection::vec(any::<bool>(), 12)) {
        let board = board_from_bits(4, 3, &bits);
        let state = EnvState::new(board.clone(), 0).unwrap();
        for a in feasible_actions(&state) {
            let inverse = match a {
                Action::Place { region, product } => Action::Remove { region, product },
                Action::Remove { region, product } => Action::Place { region, product },
                Action::DoNothing => continue,
            };
            let there = apply_action(&board, a).unwrap();
            prop_assert_eq!(apply_action(&there, inverse).unwrap(), board.clone());
        }
    }
}

#[test]
fn episode_length_and_done_flag() {
    let (env, p) = store(2, 2);
    let mut sim = simulator(&env, &p, 7);
    let mut pol = |_: &EnvState| -> shelfsim::Result<Action> { Ok(Action::DoNothing) };
    let t = rollout(&mut sim, &mut pol, &BoardConfig::full(2, 2), 3, 1).unwrap();
    assert_eq!(t.transitions.len(), 7);
    assert!(t.transitions[..6].iter().all(|x| !x.done));
    assert!(t.transitions[6].done);
    assert!(sim.step(Action::DoNothing).is_err());
}

#[test]
fn mean_reward_matches_expected_reward() {
    let (env, mut p) = store(2, 2);
    p.w_s = 0.0;
    let mut sim = simulator(&env, &p, 1);
    let board = BoardConfig::from_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
    let state = EnvState::new(board.clone(), 2).unwrap();
    let want = expected_reward(&env, &p, &SalesScaler { mean: 3.0, std: 2.0 }, &state, Action::DoNothing).unwrap();
    let mut total = 0.0;
    let reps = 20_000;
    for s in 0..reps {
        sim.reset(&board, 2, s).unwrap();
        total += sim.step(Action::DoNothing).unwrap().reward;
    }
    let got = total / reps as f64;
    let spread: f64 = board.occupied().map(|(_, j)| env.prices[j] * p.sigma_q).sum();
    assert!((got - want).abs() < 5.0 * spread / (reps as f64).sqrt(), "{got} vs {want}");
    let direct: f64 = board
        .occupied()
        .map(|(i, j)| env.prices[j] * trunc_normal_mean(p.linear_predictor(2, i, j, -1.5), p.sigma_q))
        .sum::<f64>()
        - 1.5 * 2.0;
    assert!((direct - want).abs() < 1e-9);
}

#[test]
fn posterior_file_round_trip() {
    let target = GaussianTarget::from_covariance(vec![0.0, 1.0], &[1.0, 0.2, 0.2, 2.0]);
    let cfg = NutsConfig { chains: 2, tune: 50, draws: 40, seed: 3, ..NutsConfig::default() };
    let draws = nuts_sample(&target, &[vec![0.0, 0.0], vec![1.0, 1.0]], &cfg).unwrap();
    let (env, _) = store(1, 1);
    let header = PosteriorHeader {
        config_hash: "abc".into(),
        seed: 3,
        dim: 2,
        param_names: vec!["a".into(), "b".into()],
        hierarchical: false,
        chain_count: draws.chain_count,
        samples_per_chain: draws.samples_per_chain,
        tune: draws.tune,
        environment: env,
        hyper: Hyperparams::defaults(1, 1),
        scaler: SalesScaler { mean: 1.0, std: 2.0 },
        revenue_scale: 4.5,
        diagnostics: draws.diagnostics.clone(),
        chain_stats: draws.chain_stats.clone(),
        failed: false,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("post.bin");
    write_posterior(&path, &header, &draws).unwrap();
    let (h2, d2) = read_posterior(&path).unwrap();
    assert_eq!(h2, header);
    assert_eq!(d2.draws, draws.draws);
    assert_eq!(d2.chain, draws.chain);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, bytes).unwrap();
    assert!(read_posterior(&path).is_err());
}

#[test]
fn qnet_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = QNetwork::new(2, 3, &[16, 8], 7.5, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.bin");
    write_qnet(&path, &q, "hash", 9).unwrap();
    let (header, back) = read_qnet(&path).unwrap();
    assert_eq!(header.seed, 9);
    assert_eq!(back, q);
    let state = EnvState::new(BoardConfig::full(2, 3), 5).unwrap();
    assert_eq!(back.q_values(&state), q.q_values(&state));
}
