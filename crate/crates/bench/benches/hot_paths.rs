use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shelfsim::data::{default_split_date, generate_synthetic, SyntheticSpec};
use shelfsim::inference::{nuts_sample, GaussianTarget, NutsConfig};
use shelfsim::model::{DemandModel, Hyperparams};
use shelfsim::pipeline::prepare;
use shelfsim::policies::{dqn_act, QNetwork};
use shelfsim::retail::{BoardConfig, EnvState};

fn posterior_gradient(c: &mut Criterion) {
    let d = generate_synthetic(&SyntheticSpec::default_store(1)).unwrap();
    let prep = prepare(&d.dataset, &d.env, default_split_date()).unwrap();
    let model = DemandModel::new(Hyperparams::defaults(6, 5), false).unwrap();
    let x = vec![0.1; model.dim()];
    let mut g = vec![0.0; model.dim()];
    c.bench_function("log_posterior_grad default store", |b| {
        b.iter(|| model.log_posterior_grad(black_box(&x), &prep.train, &mut g).unwrap())
    });
}

fn nuts_gaussian(c: &mut Criterion) {
    let target = GaussianTarget::from_covariance(vec![0.0; 2], &[1.0, 0.5, 0.5, 1.0]);
    let cfg = NutsConfig { chains: 1, tune: 200, draws: 200, ..NutsConfig::default() };
    c.bench_function("nuts 2-d gaussian 200+200", |b| {
        b.iter(|| nuts_sample(&target, &[vec![0.0, 0.0]], black_box(&cfg)).unwrap())
    });
}

fn q_network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let q = QNetwork::new(6, 5, &[128, 64], 10.0, &mut rng).unwrap();
    let state = EnvState::new(BoardConfig::empty(6, 5), 2).unwrap();
    c.bench_function("q-network greedy action", |b| b.iter(|| dqn_act(&q, black_box(&state))));
}

criterion_group!(benches, posterior_gradient, nuts_gaussian, q_network);
criterion_main!(benches);
