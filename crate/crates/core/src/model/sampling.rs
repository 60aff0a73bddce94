//! Ancestral prior draws and posterior-predictive quantities.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};

use super::hyper::{cholesky, Hyperparams};
use super::params::ModelParams;
use super::truncnorm::sample_trunc_normal;
use crate::features::FeatureVector;
use crate::retail::DAYS_PER_WEEK;

const T: usize = DAYS_PER_WEEK;

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn half_cauchy<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        let v = scale * (std::f64::consts::FRAC_PI_2 * u).tan();
        if v > 0.0 && v.is_finite() {
            return v;
        }
    }
}

/// LKJ(eta) correlation Cholesky factor by the onion method.
pub fn sample_lkj_cholesky<R: Rng + ?Sized>(d: usize, eta: f64, rng: &mut R) -> Vec<f64> {
    let mut l = vec![0.0; d * d];
    l[0] = 1.0;
    if d == 1 {
        return l;
    }
    let mut beta = eta + (d as f64 - 2.0) / 2.0;
    let r = 2.0 * Beta::new(beta, beta).expect("positive beta").sample(rng) - 1.0;
    l[d] = r;
    l[d + 1] = (1.0 - r * r).sqrt();
    for k in 2..d {
        beta -= 0.5;
        let y = Beta::new(k as f64 / 2.0, beta).expect("positive beta").sample(rng);
        let u: Vec<f64> = (0..k).map(|_| std_normal(rng)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let scale = y.sqrt() / norm;
        for j in 0..k {
            l[k * d + j] = u[j] * scale;
        }
        l[k * d + k] = (1.0 - y).max(0.0).sqrt();
    }
    l
}

fn mvn_draw<R: Rng + ?Sized>(mean: &[f64], chol: &[f64], rng: &mut R) -> Vec<f64> {
    let d = mean.len();
    let z: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
    (0..d).map(|i| mean[i] + (0..=i).map(|j| chol[i * d + j] * z[j]).sum::<f64>()).collect()
}

/// `w = mean + diag(stds) L z`.
fn scaled_corr_draw<R: Rng + ?Sized>(mean: &[f64], stds: &[f64], corr_chol: &[f64], rng: &mut R) -> Vec<f64> {
    let d = mean.len();
    let z: Vec<f64> = (0..d).map(|_| std_normal(rng)).collect();
    (0..d).map(|i| mean[i] + stds[i] * (0..=i).map(|j| corr_chol[i * d + j] * z[j]).sum::<f64>()).collect()
}

/// Draws one parameter set from the prior, top of the hierarchy first.
pub fn sample_prior<R: Rng + ?Sized>(hyper: &Hyperparams, hierarchical: bool, rng: &mut R) -> ModelParams {
    let (n, k) = (hyper.n_regions(), hyper.n_products());
    let sd_r = hyper.gamma_r.sqrt();
    let gp = cholesky(&hyper.gamma_p, k).expect("validated prior covariance");
    let gt = cholesky(&hyper.gamma_t, T).expect("validated prior covariance");

    let mu_p = mvn_draw(&hyper.delta_p, &gp, rng);
    let prod_corr_chol = sample_lkj_cholesky(k, hyper.lkj_eta, rng);
    let prod_stds: Vec<f64> = (0..k).map(|_| half_cauchy(hyper.sigma_p, rng)).collect();
    let w_p = scaled_corr_draw(&mu_p, &prod_stds, &prod_corr_chol, rng);

    let mu_t = mvn_draw(&hyper.delta_t, &gt, rng);
    let temp_corr_chol = sample_lkj_cholesky(T, hyper.lkj_eta, rng);
    let temp_stds: Vec<f64> = (0..T).map(|_| half_cauchy(hyper.sigma_t, rng)).collect();
    let w_t = scaled_corr_draw(&mu_t, &temp_stds, &temp_corr_chol, rng);

    let w_r: Vec<f64> = (0..n).map(|i| hyper.mu_r[i] + sd_r * std_normal(rng)).collect();
    let w_r_cell = hierarchical.then(|| (0..n * k).map(|c| w_r[c / k] + sd_r * std_normal(rng)).collect::<Vec<f64>>());

    let mu_s = half_cauchy(hyper.phi_s, rng);
    let sigma_s = half_cauchy(hyper.psi_s, rng);
    // exact zero would leave the log-transformed support
    let w_s = loop {
        let v = sample_trunc_normal(mu_s, sigma_s, rng);
        if v > 0.0 {
            break v;
        }
    };
    let b = hyper.b_scale * std_normal(rng);
    let g: f64 = Gamma::new(hyper.alpha_q, 1.0).expect("positive shape").sample(rng);
    let sigma_q = hyper.beta_q / g;

    ModelParams {
        w_r,
        w_p,
        mu_p,
        prod_corr_chol,
        prod_stds,
        w_t,
        mu_t,
        temp_corr_chol,
        temp_stds,
        w_s,
        mu_s,
        sigma_s,
        b,
        sigma_q,
        w_r_cell,
    }
}

/// `x^T w + b` for a dense feature vector.
pub fn mean_quantity(params: &ModelParams, feature: &FeatureVector) -> f64 {
    let w = params.weight_vector(feature.product());
    feature.to_dense().iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + params.b
}

/// One draw of the sold quantity for a feature vector.
pub fn predictive_quantity<R: Rng + ?Sized>(params: &ModelParams, feature: &FeatureVector, rng: &mut R) -> f64 {
    sample_trunc_normal(mean_quantity(params, feature), params.sigma_q, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lkj_marginal_variance() {
        // off-diagonal entries of LKJ(eta) in d dims have variance 1/(2 eta + d - 1)
        let (d, eta) = (4, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let mut sum_sq = vec![0.0; d * d];
        for _ in 0..n {
            let l = sample_lkj_cholesky(d, eta, &mut rng);
            for i in 0..d {
                for j in 0..i {
                    let c: f64 = (0..=j).map(|p| l[i * d + p] * l[j * d + p]).sum();
                    sum_sq[i * d + j] += c * c;
                }
            }
        }
        let expected = 1.0 / (2.0 * eta + d as f64 - 1.0);
        for i in 0..d {
            for j in 0..i {
                let v = sum_sq[i * d + j] / n as f64;
                assert!((v - expected).abs() / expected < 0.05, "({i},{j}) {v} vs {expected}");
            }
        }
    }

    #[test]
    fn degenerate_noise_returns_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hyper = Hyperparams::defaults(2, 2);
        let mut p = sample_prior(&hyper, false, &mut rng);
        p.sigma_q = 1e-8;
        p.w_t = vec![0.0; 7];
        p.w_r = vec![0.0, 0.0];
        p.w_p = vec![0.0, 0.0];
        p.w_s = 0.0;
        p.b = 4.2;
        let scaler = crate::features::SalesScaler { mean: 0.0, std: 1.0 };
        let fv = crate::features::extract_features(2, 1, 0, 3.0, &scaler, 2, 2).unwrap();
        let q = predictive_quantity(&p, &fv, &mut rng);
        assert!((q - 4.2).abs() < 1e-6);
        p.b = -50.0;
        p.sigma_q = 1.0;
        for _ in 0..1000 {
            let q = predictive_quantity(&p, &fv, &mut rng);
            assert!((0.0..0.5).contains(&q));
        }
    }
}
