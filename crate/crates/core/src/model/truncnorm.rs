//! Normal distribution truncated to `[0, inf)`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::special::{inv_mills, log_ndtr, log_ndtr_and_inv_mills, norm_cdf, norm_logpdf, norm_ppf};

/// Standardized lower bound beyond which sampling switches to rejection.
const TAIL_SWITCH: f64 = 5.0;

/// Log density of `N(mu, sigma^2)` restricted to `q >= 0`. Returns `-inf`
/// outside the support.
pub fn trunc_normal_logpdf(q: f64, mu: f64, sigma: f64) -> f64 {
    if q < 0.0 || !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    norm_logpdf((q - mu) / sigma) - sigma.ln() - log_ndtr(mu / sigma)
}

/// Partial derivatives of [`trunc_normal_logpdf`] with respect to `mu` and `sigma`.
#[inline]
pub fn trunc_normal_logpdf_grad(q: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    let inv_s = 1.0 / sigma;
    let t = (q - mu) * inv_s;
    let z = mu * inv_s;
    let (lz, lam) = log_ndtr_and_inv_mills(z);
    let value = -0.5 * t * t - crate::special::LN_SQRT_2PI - sigma.ln() - lz;
    let d_mu = (t - lam) * inv_s;
    let d_sigma = (t * t - 1.0 + lam * z) * inv_s;
    (value, d_mu, d_sigma)
}

/// Mean of the truncated distribution.
pub fn trunc_normal_mean(mu: f64, sigma: f64) -> f64 {
    mu + sigma * inv_mills(mu / sigma)
}

/// Exact draw from `N(mu, sigma^2)` truncated to `[0, inf)`.
pub fn sample_trunc_normal<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let alpha = -mu / sigma;
    let x = if alpha > TAIL_SWITCH {
        sample_exp_tail(alpha, rng)
    } else if alpha >= 0.0 {
        // upper-tail form keeps precision when Phi(alpha) is close to 1
        let u: f64 = rng.random();
        -norm_ppf((1.0 - u) * norm_cdf(-alpha))
    } else {
        let u: f64 = rng.random();
        let lo = norm_cdf(alpha);
        norm_ppf(lo + u * (1.0 - lo))
    };
    (mu + sigma * x).max(0.0)
}

/// Standard normal truncated to `[alpha, inf)` by exponential rejection.
fn sample_exp_tail<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (alpha + (alpha * alpha + 4.0).sqrt());
    loop {
        let e: f64 = Exp1.sample(rng);
        let z = alpha + e / rate;
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (z - rate) * (z - rate) {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson rule over `[a, b]`.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    #[test]
    fn half_normal_density_at_zero() {
        let expected = (2.0 / (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((trunc_normal_logpdf(0.0, 0.0, 1.0) - expected).abs() < 1e-14);
        assert!((expected - (-0.2258)).abs() < 1e-4);
    }

    #[test]
    fn far_from_boundary_is_plain_normal() {
        let v = trunc_normal_logpdf(5.0, 5.0, 1.0);
        assert!((v - (-0.918_938_533_204_672_7)).abs() < 1e-6);
    }

    #[test]
    fn negative_support_is_excluded() {
        assert_eq!(trunc_normal_logpdf(-0.1, 0.0, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn deep_tail_density_matches_quadrature() {
        // unnormalized density exp(-(q-mu)^2/2) integrated over [0, inf)
        let (mu, sigma) = (-10.0, 1.0);
        let peak = 0.5 * mu * mu;
        let mass = simpson(|q| (-0.5 * (q - mu) * (q - mu) + peak).exp(), 0.0, 5.0, 200_000);
        let q = 0.1;
        let oracle = -0.5 * (q - mu) * (q - mu) + peak - mass.ln() - 0.0 * sigma;
        let got = trunc_normal_logpdf(q, mu, sigma);
        assert!((got - oracle).abs() < 1e-8, "got {got} oracle {oracle}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for &(q, mu, s) in &[(0.3, -2.0, 0.7), (4.0, 3.0, 1.5), (0.01, -12.0, 1.0), (2.0, 0.0, 0.2)] {
            let (v, dm, ds) = trunc_normal_logpdf_grad(q, mu, s);
            assert!((v - trunc_normal_logpdf(q, mu, s)).abs() < 1e-12);
            let h = 1e-6;
            let fm = (trunc_normal_logpdf(q, mu + h, s) - trunc_normal_logpdf(q, mu - h, s)) / (2.0 * h);
            let fs = (trunc_normal_logpdf(q, mu, s + h) - trunc_normal_logpdf(q, mu, s - h)) / (2.0 * h);
            assert!((dm - fm).abs() < 1e-6 * fm.abs().max(1.0), "mu {dm} vs {fm}");
            assert!((ds - fs).abs() < 1e-6 * fs.abs().max(1.0), "sigma {ds} vs {fs}");
        }
    }

    #[test]
    fn sampler_respects_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| sample_trunc_normal(100.0, 1.0, &mut rng)).sum::<f64>() / n as f64;
        assert!((m - 100.0).abs() < 0.05);
        for _ in 0..10_000 {
            let x = sample_trunc_normal(-50.0, 1.0, &mut rng);
            assert!((0.0..0.5).contains(&x));
        }
    }

    #[test]
    fn sampler_mean_in_tail_branch_matches_analytic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000;
        let (mu, s) = (-7.0, 1.0);
        let m: f64 = (0..n).map(|_| sample_trunc_normal(mu, s, &mut rng)).sum::<f64>() / n as f64;
        let exact = trunc_normal_mean(mu, s);
        assert!((m - exact).abs() / exact < 0.01, "{m} vs {exact}");
    }
}
