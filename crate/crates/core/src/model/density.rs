//! Log prior, log likelihood and the unconstrained log posterior with its
//! gradient.
//!
//! The prior and the constraining transform are differentiated on a tape;
//! the likelihood, which dominates the cost, carries a hand-written gradient.

use statrs::function::gamma::ln_gamma;

use super::hyper::{cholesky, Hyperparams};
use super::params::{unpack, ModelParams, ParamLayout};
use crate::autodiff::{Real, Tape};
use crate::error::{Error, Result};
use crate::features::DesignMatrix;
use crate::retail::DAYS_PER_WEEK;
use crate::special::{log_ndtr_and_inv_mills, LN_SQRT_2PI};

const T: usize = DAYS_PER_WEEK;
const LN_2: f64 = std::f64::consts::LN_2;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Fixed-covariance Gaussian prior with its Cholesky factor cached.
#[derive(Clone, Debug)]
struct FixedGaussian {
    mean: Vec<f64>,
    chol: Vec<f64>,
    log_norm: f64,
}

impl FixedGaussian {
    fn new(mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol =
            cholesky(cov, d).ok_or_else(|| Error::InvalidInput("prior covariance not positive definite".into()))?;
        let log_det_half: f64 = (0..d).map(|i| chol[i * d + i].ln()).sum();
        Ok(Self { mean: mean.to_vec(), chol, log_norm: -(d as f64) * LN_SQRT_2PI - log_det_half })
    }

    fn logpdf<S: Real>(&self, x: &[S]) -> S {
        let d = self.mean.len();
        let mut u: Vec<S> = Vec::with_capacity(d);
        let mut quad = x[0].lift(0.0);
        for i in 0..d {
            let mut acc = x[i] - self.mean[i];
            for (j, uj) in u.iter().enumerate() {
                acc = acc - *uj * self.chol[i * d + j];
            }
            let ui = acc / self.chol[i * d + i];
            quad = quad + ui * ui;
            u.push(ui);
        }
        quad * -0.5 + self.log_norm
    }
}

/// `ln N(x | mean, diag(stds) L L^T diag(stds))` for a correlation Cholesky factor `L`.
pub fn mvn_chol_logpdf<S: Real>(x: &[S], mean: &[S], stds: &[S], corr_chol: &[S]) -> S {
    let d = x.len();
    let mut u: Vec<S> = Vec::with_capacity(d);
    let mut quad = x[0].lift(0.0);
    let mut log_det_half = x[0].lift(0.0);
    for i in 0..d {
        let mut acc = (x[i] - mean[i]) / stds[i];
        for (j, uj) in u.iter().enumerate() {
            acc = acc - *uj * corr_chol[i * d + j];
        }
        let lii = corr_chol[i * d + i];
        let ui = acc / lii;
        quad = quad + ui * ui;
        log_det_half = log_det_half + stds[i].ln() + lii.ln();
        u.push(ui);
    }
    quad * -0.5 - log_det_half - (d as f64) * LN_SQRT_2PI
}

/// LKJ density over a `d x d` correlation Cholesky factor, normalized.
pub fn lkj_corr_cholesky_logpdf<S: Real>(l: &[S], d: usize, eta: f64) -> S {
    let mut lp = l[0].lift(-lkj_log_normalizer(d, eta));
    for i in 1..d {
        let coef = (d - i - 1) as f64 + 2.0 * eta - 2.0;
        lp = lp + l[i * d + i].ln() * coef;
    }
    lp
}

/// Log normalizing constant of the LKJ(eta) density on `d x d` correlation matrices.
pub fn lkj_log_normalizer(d: usize, eta: f64) -> f64 {
    let mut log_c = 0.0;
    for k in 1..d {
        let kk = (d - k) as f64;
        let a = eta + (kk - 1.0) / 2.0;
        let ln_beta = 2.0 * ln_gamma(a) - ln_gamma(2.0 * a);
        log_c += (2.0 * eta - 2.0 + kk) * kk * LN_2 + kk * ln_beta;
    }
    log_c
}

pub fn half_cauchy_logpdf<S: Real>(x: S, scale: f64) -> S {
    let r = x / scale;
    -(r * r).ln_1p() + (LN_2 - LN_PI - scale.ln())
}

pub fn normal_logpdf<S: Real>(x: S, mean: f64, sd: f64) -> S {
    let z = (x - mean) / sd;
    z * z * -0.5 - (LN_SQRT_2PI + sd.ln())
}

/// Truncated-normal density in generic scalar form (for the `w_s` prior).
pub fn trunc_normal_logpdf_generic<S: Real>(x: S, mu: S, sigma: S) -> S {
    let z = (x - mu) / sigma;
    z * z * -0.5 - sigma.ln() - (mu / sigma).log_ndtr() - LN_SQRT_2PI
}

pub fn inv_gamma_logpdf<S: Real>(x: S, shape: f64, scale: f64) -> S {
    let c = shape * scale.ln() - ln_gamma(shape);
    x.ln() * -(shape + 1.0) - x.lift(scale) / x + c
}

/// Gradient of the log likelihood with respect to constrained parameters.
#[derive(Clone, Debug, Default)]
pub struct LikelihoodGrad {
    pub w_t: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_p: Vec<f64>,
    pub w_s: f64,
    pub b: f64,
    pub sigma_q: f64,
    pub w_r_cell: Vec<f64>,
}

/// The spatial-demand model: hyperparameters plus the parameter layout.
#[derive(Clone, Debug)]
pub struct DemandModel {
    hyper: Hyperparams,
    layout: ParamLayout,
    mu_p_prior: FixedGaussian,
    mu_t_prior: FixedGaussian,
}

impl DemandModel {
    pub fn new(hyper: Hyperparams, hierarchical: bool) -> Result<Self> {
        hyper.validate()?;
        let layout = ParamLayout::new(hyper.n_regions(), hyper.n_products(), hierarchical);
        let mu_p_prior = FixedGaussian::new(&hyper.delta_p, &hyper.gamma_p)?;
        let mu_t_prior = FixedGaussian::new(&hyper.delta_t, &hyper.gamma_t)?;
        Ok(Self { hyper, layout, mu_p_prior, mu_t_prior })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_prior_generic<S: Real>(&self, p: &ModelParams<S>) -> S {
        let h = &self.hyper;
        let (n, k) = (self.layout.n_regions, self.layout.n_products);
        let sd_r = h.gamma_r.sqrt();
        let mut lp = p.b.lift(0.0);

        for i in 0..n {
            lp = lp + normal_logpdf(p.w_r[i], h.mu_r[i], sd_r);
        }
        if let Some(cell) = &p.w_r_cell {
            for i in 0..n {
                for j in 0..k {
                    let z = (cell[i * k + j] - p.w_r[i]) / sd_r;
                    lp = lp + z * z * -0.5 - (LN_SQRT_2PI + sd_r.ln());
                }
            }
        }

        lp = lp + mvn_chol_logpdf(&p.w_p, &p.mu_p, &p.prod_stds, &p.prod_corr_chol);
        lp = lp + self.mu_p_prior.logpdf(&p.mu_p);
        lp = lp + lkj_corr_cholesky_logpdf(&p.prod_corr_chol, k, h.lkj_eta);
        for &s in &p.prod_stds {
            lp = lp + half_cauchy_logpdf(s, h.sigma_p);
        }

        lp = lp + mvn_chol_logpdf(&p.w_t, &p.mu_t, &p.temp_stds, &p.temp_corr_chol);
        lp = lp + self.mu_t_prior.logpdf(&p.mu_t);
        lp = lp + lkj_corr_cholesky_logpdf(&p.temp_corr_chol, T, h.lkj_eta);
        for &s in &p.temp_stds {
            lp = lp + half_cauchy_logpdf(s, h.sigma_t);
        }

        lp = lp + trunc_normal_logpdf_generic(p.w_s, p.mu_s, p.sigma_s);
        lp = lp + half_cauchy_logpdf(p.mu_s, h.phi_s);
        lp = lp + half_cauchy_logpdf(p.sigma_s, h.psi_s);
        lp = lp + inv_gamma_logpdf(p.sigma_q, h.alpha_q, h.beta_q);
        lp = lp + normal_logpdf(p.b, 0.0, h.b_scale);
        lp
    }

    /// Log prior density of constrained parameters; `-inf` if any invariant fails.
    pub fn log_prior(&self, params: &ModelParams) -> f64 {
        if params.layout() != self.layout || params.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let v = self.log_prior_generic(params);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    /// Log likelihood of `dm.y` under the truncated-normal observation model.
    pub fn log_likelihood(&self, params: &ModelParams, dm: &DesignMatrix) -> Result<f64> {
        Ok(self.log_likelihood_grad(params, dm, false)?.0)
    }

    /// Log likelihood and (optionally) its gradient in constrained coordinates.
    pub fn log_likelihood_grad(
        &self,
        params: &ModelParams,
        dm: &DesignMatrix,
        with_grad: bool,
    ) -> Result<(f64, LikelihoodGrad)> {
        let (n, k) = (self.layout.n_regions, self.layout.n_products);
        if dm.n_regions != n || dm.n_products != k || params.layout() != self.layout {
            return Err(Error::DimensionMismatch("design matrix or parameters do not match the model".into()));
        }
        let cols = dm.n_cols();
        let mut g = LikelihoodGrad {
            w_t: vec![0.0; T],
            w_r: vec![0.0; n],
            w_p: vec![0.0; k],
            w_r_cell: if self.layout.hierarchical { vec![0.0; n * k] } else { Vec::new() },
            ..Default::default()
        };
        let sigma = params.sigma_q;
        let inv_s = 1.0 / sigma;
        let r_off = T;
        let p_off = T + n;
        let s_col = T + n + k;
        let mut total = 0.0;
        let mut weights = params.weight_vector(0);
        let mut weights_product = 0;
        for (r, &y) in dm.y.iter().enumerate() {
            let x = &dm.x[r * cols..(r + 1) * cols];
            let product = dm.rows[r].product;
            if self.layout.hierarchical && product != weights_product {
                weights = params.weight_vector(product);
                weights_product = product;
            }
            let mu = x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + params.b;
            if y < 0.0 {
                return Ok((f64::NEG_INFINITY, g));
            }
            let t = (y - mu) * inv_s;
            let z = mu * inv_s;
            let (lz, lam) = log_ndtr_and_inv_mills(z);
            total -= 0.5 * t * t + lz;
            if with_grad {
                let d_mu = (t - lam) * inv_s;
                let d_sigma = (t * t - 1.0 + lam * z) * inv_s;
                for d in 0..T {
                    g.w_t[d] += d_mu * x[d];
                }
                if self.layout.hierarchical {
                    for i in 0..n {
                        g.w_r_cell[i * k + product] += d_mu * x[r_off + i];
                    }
                } else {
                    for i in 0..n {
                        g.w_r[i] += d_mu * x[r_off + i];
                    }
                }
                for j in 0..k {
                    g.w_p[j] += d_mu * x[p_off + j];
                }
                g.w_s += d_mu * x[s_col];
                g.b += d_mu;
                g.sigma_q += d_sigma;
            }
        }
        total -= dm.y.len() as f64 * (LN_SQRT_2PI + sigma.ln());
        Ok((total, g))
    }

    /// Log-Jacobian of the constraining transform at `theta`.
    pub fn log_jacobian(&self, theta: &[f64]) -> Result<f64> {
        Ok(unpack(theta, &self.layout)?.1)
    }

    /// Unnormalized log posterior in unconstrained coordinates.
    pub fn log_posterior(&self, theta: &[f64], dm: &DesignMatrix) -> Result<f64> {
        let (params, logjac) = unpack(theta, &self.layout)?;
        let lp = self.log_prior_generic(&params) + logjac;
        let ll = self.log_likelihood(&params, dm)?;
        let v = lp + ll;
        Ok(if v.is_finite() { v } else { f64::NEG_INFINITY })
    }

    /// Log posterior and its exact gradient. Non-finite values are reported
    /// as `-inf` with a zero gradient.
    pub fn log_posterior_grad(&self, theta: &[f64], dm: &DesignMatrix, grad: &mut [f64]) -> Result<f64> {
        let dim = self.layout.dim();
        if theta.len() != dim || grad.len() != dim {
            return Err(Error::DimensionMismatch(format!("expected {dim} coordinates")));
        }
        let tape = Tape::with_capacity(2048);
        let vars = tape.vars(theta);
        let (params_v, logjac) = unpack(&vars, &self.layout)?;
        let prior = self.log_prior_generic(&params_v) + logjac;
        let params = params_v.values();
        let (ll, lg) = self.log_likelihood_grad(&params, dm, true)?;

        // linear in the constrained parameters, so the tape chains the
        // likelihood gradient through the transform
        let pv = &params_v;
        let mut out = prior;
        for (v, c) in pv.w_t.iter().zip(&lg.w_t).chain(pv.w_r.iter().zip(&lg.w_r)).chain(pv.w_p.iter().zip(&lg.w_p)) {
            out = out + *v * *c;
        }
        if let Some(cell) = &pv.w_r_cell {
            for (v, c) in cell.iter().zip(&lg.w_r_cell) {
                out = out + *v * *c;
            }
        }
        out = out + pv.w_s * lg.w_s + pv.b * lg.b + pv.sigma_q * lg.sigma_q;
        let adj = tape.gradient(out);
        for (g, v) in grad.iter_mut().zip(&vars) {
            *g = adj[v.index()];
        }

        let v = prior.value() + ll;
        if !v.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return Ok(f64::NEG_INFINITY);
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lkj_two_dim_normalizer_matches_beta() {
        // density of r is (1-r^2)^(eta-1) / (2^(2eta-1) B(eta, eta))
        let eta: f64 = 2.0;
        let expected = (2.0 * eta - 1.0) * LN_2 + 2.0 * ln_gamma(eta) - ln_gamma(2.0 * eta);
        assert!((lkj_log_normalizer(2, eta) - expected).abs() < 1e-12);
        assert_eq!(lkj_log_normalizer(1, eta), 0.0);
    }

    #[test]
    fn lkj_three_dim_integrates_to_one() {
        // integrate over canonical partial correlations with the transform Jacobian
        use crate::model::params::corr_cholesky_from_unconstrained;
        let m = 60;
        let h = 2.0 / m as f64;
        let mut total = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    let z = [-1.0 + (a as f64 + 0.5) * h, -1.0 + (b as f64 + 0.5) * h, -1.0 + (c as f64 + 0.5) * h];
                    let y: Vec<f64> = z.iter().map(|v: &f64| v.atanh()).collect();
                    let (l, logjac_y) = corr_cholesky_from_unconstrained(&y, 3, 0.0);
                    // convert the y-space Jacobian into z-space: dz/dy = 1 - z^2
                    let logjac_z = logjac_y - z.iter().map(|v| (1.0 - v * v).ln()).sum::<f64>();
                    total += (lkj_corr_cholesky_logpdf(&l, 3, 2.0) + logjac_z).exp() * h * h * h;
                }
            }
        }
        assert!((total - 1.0).abs() < 2e-3, "{total}");
    }

    #[test]
    fn half_cauchy_is_normalized_at_zero() {
        let v: f64 = half_cauchy_logpdf(0.0, 2.5);
        assert!((v - (2.0 / (std::f64::consts::PI * 2.5)).ln()).abs() < 1e-12);
    }
}
