use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use shelfsim::data::{default_split_date, generate_synthetic, SyntheticSpec};
use shelfsim::features::DesignMatrix;
use shelfsim::model::{DemandModel, Hyperparams};
use shelfsim::nn::Mlp;
use shelfsim::pipeline::prepare;
use shelfsim::policies::QNetwork;

fn small_design(seed: u64, n: usize, k: usize) -> DesignMatrix {
    let mut spec = SyntheticSpec::small(n, k, 60, seed);
    spec.start_date = chrono::NaiveDate::from_ymd_opt(2019, 6, 1).unwrap();
    let d = generate_synthetic(&spec).unwrap();
    prepare(&d.dataset, &d.env, default_split_date()).unwrap().train
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn check_posterior_gradient(hierarchical: bool) {
    let (n, k) = (3, 2);
    let dm = small_design(11, n, k);
    let model = DemandModel::new(Hyperparams::defaults(n, k), hierarchical).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = model.dim();
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x: Vec<f64> = (0..dim).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let mut g = vec![0.0; dim];
        let f0 = model.log_posterior_grad(&x, &dm, &mut g).unwrap();
        assert!(f0.is_finite());
        assert!((f0 - model.log_posterior(&x, &dm).unwrap()).abs() < 1e-9 * f0.abs().max(1.0));
        for i in 0..dim {
            let h = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (model.log_posterior(&xp, &dm).unwrap() - model.log_posterior(&xm, &dm).unwrap()) / (2.0 * h);
            worst = worst.max(rel_err(g[i], fd));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn posterior_gradient_matches_central_differences() {
    check_posterior_gradient(false);
}

#[test]
fn hierarchical_posterior_gradient_matches_central_differences() {
    check_posterior_gradient(true);
}

fn check_mlp_backprop(net: &Mlp, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, inputs, outputs) = (4, net.input_dim(), net.output_dim());
    let x = DMatrix::from_fn(batch, inputs, |_, _| rng.sample::<f64, _>(StandardNormal));
    let w = DMatrix::from_fn(batch, outputs, |_, _| rng.sample::<f64, _>(StandardNormal));
    let loss = |m: &Mlp| m.forward_batch(x.clone()).output().component_mul(&w).sum();
    let grads = net.backward(&net.forward_batch(x.clone()), w.clone()).params();
    let params = net.params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let step = (params.len() / 300).max(1);
    for i in (0..params.len()).step_by(step) {
        let h = 1e-6;
        let mut p = params.clone();
        p[i] += h;
        probe.set_params(&p).unwrap();
        let up = loss(&probe);
        p[i] -= 2.0 * h;
        probe.set_params(&p).unwrap();
        let down = loss(&probe);
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * h)));
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn mlp_backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = Mlp::new(&[6, 16, 8, 2], &mut rng).unwrap();
    check_mlp_backprop(&net, 4);
}

#[test]
fn q_network_backprop_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q = QNetwork::new(6, 5, &[128, 64], 1.0, &mut rng).unwrap();
    check_mlp_backprop(&q.net, 10);
}
