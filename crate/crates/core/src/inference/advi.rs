//! Mean-field automatic differentiation variational inference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::target::LogDensity;
use crate::error::{Error, Result};
use crate::special::LN_SQRT_2PI;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdviConfig {
    pub iterations: usize,
    pub step_size: f64,
    /// Consecutive non-finite objective evaluations tolerated before aborting.
    pub max_bad_steps: usize,
    pub seed: u64,
}

impl Default for AdviConfig {
    fn default() -> Self {
        Self { iterations: 200_000, step_size: 1e-2, max_bad_steps: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdviResult {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Single-sample ELBO estimate per iteration; non-finite steps are skipped.
    pub elbo_trace: Vec<f64>,
}

impl AdviResult {
    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|w| w.exp()).collect()
    }
}

/// Per-coordinate step-size sequence with a decaying gradient-scale estimate.
struct AdaptiveStep {
    s: Vec<f64>,
    started: bool,
}

impl AdaptiveStep {
    fn new(dim: usize) -> Self {
        Self { s: vec![0.0; dim], started: false }
    }

    fn apply(&mut self, x: &mut [f64], g: &[f64], eta: f64, k: usize) {
        const ALPHA: f64 = 0.1;
        const TAU: f64 = 1.0;
        let decay = (k as f64).powf(-0.5 + 1e-16);
        for i in 0..x.len() {
            let g2 = g[i] * g[i];
            self.s[i] = if self.started { ALPHA * g2 + (1.0 - ALPHA) * self.s[i] } else { g2 };
            x[i] += eta * decay / (TAU + self.s[i].sqrt()) * g[i];
        }
        self.started = true;
    }
}

/// Fits `q(x) = N(mean, diag(exp(log_std))^2)` by stochastic ascent on the ELBO.
pub fn advi_fit<D: LogDensity>(target: &D, init: &[f64], cfg: &AdviConfig) -> Result<AdviResult> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!("init has {} entries, target {}", init.len(), dim)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut mu = init.to_vec();
    let mut omega: Vec<f64> = vec![0.0; dim];
    let mut step_mu = AdaptiveStep::new(dim);
    let mut step_omega = AdaptiveStep::new(dim);
    let entropy_const = dim as f64 * (0.5 + LN_SQRT_2PI);

    let mut eps = vec![0.0; dim];
    let mut zeta = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut g_omega = vec![0.0; dim];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut bad = 0;
    let mut k = 0;
    for it in 0..cfg.iterations {
        for i in 0..dim {
            eps[i] = rng.sample(StandardNormal);
            zeta[i] = mu[i] + omega[i].exp() * eps[i];
        }
        let lp = target.logp_grad(&zeta, &mut g);
        let elbo = lp + omega.iter().sum::<f64>() + entropy_const;
        if !elbo.is_finite() || g.iter().any(|v| !v.is_finite()) {
            bad += 1;
            if bad >= cfg.max_bad_steps {
                return Err(Error::Diverged {
                    iterations: it + 1,
                    reason: format!("{bad} consecutive non-finite objective evaluations"),
                });
            }
            continue;
        }
        bad = 0;
        k += 1;
        trace.push(elbo);
        for i in 0..dim {
            g_omega[i] = g[i] * eps[i] * omega[i].exp() + 1.0;
        }
        step_mu.apply(&mut mu, &g, cfg.step_size, k);
        step_omega.apply(&mut omega, &g_omega, cfg.step_size, k);
    }
    Ok(AdviResult { mean: mu, log_std: omega, elbo_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::target::{FnDensity, GaussianTarget};

    #[test]
    fn always_infinite_target_aborts() {
        let t = FnDensity::new(2, |_x: &[f64], _g: &mut [f64]| -f64::INFINITY);
        let r = advi_fit(&t, &[0.0, 0.0], &AdviConfig { iterations: 1000, ..Default::default() });
        assert!(matches!(r, Err(Error::Diverged { iterations: 100, .. })));
    }

    #[test]
    fn recovers_standard_normal() {
        let t = GaussianTarget::from_covariance(vec![0.0], &[1.0]);
        let cfg = AdviConfig { seed: 1, ..Default::default() };
        let r = advi_fit(&t, &[2.0], &cfg).unwrap();
        assert!(r.mean[0].abs() < 0.05, "{:?}", r.mean);
        assert!((r.std()[0] - 1.0).abs() < 0.1, "{:?}", r.std());
    }
}
