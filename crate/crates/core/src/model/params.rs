//! Model parameters and their bijection to an unconstrained real vector.
//!
//! Unconstrained layout, in order:
//! `w_r | w_p | z_p | prod_corr (CPC) | ln prod_stds | w_t | z_t |
//!  temp_corr (CPC) | ln temp_stds | ln w_s | u_s | ln sigma_s | b |
//!  ln sigma_q | w_r_cell (hierarchical only)`.
//!
//! Group means are stored relative to the weights they generate:
//! `mu_p = w_p - diag(c) L_p z_p` with `c = s / sqrt(1 + (s / GROUP_MEAN_SCALE)^2)`
//! and `s = prod_stds`, likewise for `mu_t`. For small `s` the `z` blocks
//! are close to standard normal given the weights; for large `s` the group
//! mean keeps a fixed width. In the same spirit
//! `ln mu_s = ln w_s + u_s * r / sqrt(1 + r^2)` with `r = sigma_s / w_s`.
//!
//! Correlation Cholesky factors use canonical partial correlations
//! `z = tanh(y)`, which keeps every implied correlation matrix on the unit
//! diagonal.

use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::retail::DAYS_PER_WEEK;

const T: usize = DAYS_PER_WEEK;

/// Width the stored group-mean offsets saturate at for large group scales.
pub const GROUP_MEAN_SCALE: f64 = 5.0;

#[inline]
fn offset_scale<S: Real>(s: S) -> S {
    let r = s / GROUP_MEAN_SCALE;
    s / (r * r + 1.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<S = f64> {
    pub w_r: Vec<S>,
    pub w_p: Vec<S>,
    pub mu_p: Vec<S>,
    /// Row-major `k x k` lower triangle.
    pub prod_corr_chol: Vec<S>,
    pub prod_stds: Vec<S>,
    pub w_t: Vec<S>,
    pub mu_t: Vec<S>,
    /// Row-major `7 x 7` lower triangle.
    pub temp_corr_chol: Vec<S>,
    pub temp_stds: Vec<S>,
    pub w_s: S,
    pub mu_s: S,
    pub sigma_s: S,
    pub b: S,
    pub sigma_q: S,
    /// Row-major `n x k` per-cell region weights (hierarchical variant).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_r_cell: Option<Vec<S>>,
}

impl ModelParams<f64> {
    pub fn n_regions(&self) -> usize {
        self.w_r.len()
    }

    pub fn n_products(&self) -> usize {
        self.w_p.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.n_regions(), self.n_products(), self.w_r_cell.is_some())
    }

    /// Region weight acting on cell `(i, j)`.
    #[inline]
    pub fn region_weight(&self, region: usize, product: usize) -> f64 {
        match &self.w_r_cell {
            Some(cell) => cell[region * self.n_products() + product],
            None => self.w_r[region],
        }
    }

    /// Weight vector `[w_t | w_r | w_p | w_s]` as seen by rows of `product`.
    pub fn weight_vector(&self, product: usize) -> Vec<f64> {
        let n = self.n_regions();
        let mut w = Vec::with_capacity(T + n + self.n_products() + 1);
        w.extend_from_slice(&self.w_t);
        w.extend((0..n).map(|i| self.region_weight(i, product)));
        w.extend_from_slice(&self.w_p);
        w.push(self.w_s);
        w
    }

    /// Mean of the untruncated quantity distribution for one cell.
    #[inline]
    pub fn linear_predictor(&self, day: usize, region: usize, product: usize, prev_sales: f64) -> f64 {
        self.w_t[day] + self.region_weight(region, product) + self.w_p[product] + self.w_s * prev_sales + self.b
    }

    /// Checks every parameter invariant.
    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n_regions(), self.n_products());
        let bad = |what: &str| Err(Error::InvalidInput(format!("model parameters: {what}")));
        if self.mu_p.len() != k || self.prod_stds.len() != k || self.prod_corr_chol.len() != k * k {
            return bad("product block shape");
        }
        if self.w_t.len() != T
            || self.mu_t.len() != T
            || self.temp_stds.len() != T
            || self.temp_corr_chol.len() != T * T
        {
            return bad("temporal block shape");
        }
        if let Some(c) = &self.w_r_cell {
            if c.len() != n * k {
                return bad("w_r_cell shape");
            }
        }
        for (name, l, d) in [("product", &self.prod_corr_chol, k), ("temporal", &self.temp_corr_chol, T)] {
            for i in 0..d {
                if !(l[i * d + i] > 0.0) {
                    return bad(&format!("{name} Cholesky diagonal must be positive"));
                }
                let norm: f64 = (0..=i).map(|j| l[i * d + j] * l[i * d + j]).sum();
                if (norm - 1.0).abs() > 1e-8 {
                    return bad(&format!("{name} correlation diagonal is {norm}, not 1"));
                }
                if (i + 1..d).any(|j| l[i * d + j] != 0.0) {
                    return bad(&format!("{name} Cholesky factor is not lower triangular"));
                }
            }
        }
        if self.prod_stds.iter().chain(&self.temp_stds).any(|s| !(*s > 0.0)) {
            return bad("standard deviations must be positive");
        }
        if !(self.w_s >= 0.0) {
            return bad("w_s must be non-negative");
        }
        if !(self.mu_s > 0.0 && self.sigma_s > 0.0 && self.sigma_q > 0.0) {
            return bad("scale parameters must be positive");
        }
        let all_finite =
            [&self.w_r, &self.w_p, &self.mu_p, &self.w_t, &self.mu_t].iter().all(|v| v.iter().all(|x| x.is_finite()))
                && self.b.is_finite()
                && self.w_s.is_finite();
        if !all_finite {
            return bad("non-finite weights");
        }
        Ok(())
    }

    pub fn pack(&self) -> Vec<f64> {
        pack(self)
    }

    /// Regression weights `[w_t | w_r (or w_r_cell) | w_p | w_s]`.
    pub fn regression_weights(&self) -> Vec<f64> {
        let mut v = self.w_t.clone();
        match &self.w_r_cell {
            Some(c) => v.extend_from_slice(c),
            None => v.extend_from_slice(&self.w_r),
        }
        v.extend_from_slice(&self.w_p);
        v.push(self.w_s);
        v
    }
}

fn n_cpc(d: usize) -> usize {
    d * (d - 1) / 2
}

/// Offsets of each block inside the unconstrained vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_regions: usize,
    pub n_products: usize,
    pub hierarchical: bool,
}

impl ParamLayout {
    pub fn new(n_regions: usize, n_products: usize, hierarchical: bool) -> Self {
        Self { n_regions, n_products, hierarchical }
    }

    pub fn w_r(&self) -> usize {
        0
    }
    pub fn w_p(&self) -> usize {
        self.n_regions
    }
    pub fn z_p(&self) -> usize {
        self.w_p() + self.n_products
    }
    pub fn prod_cpc(&self) -> usize {
        self.z_p() + self.n_products
    }
    pub fn prod_stds(&self) -> usize {
        self.prod_cpc() + n_cpc(self.n_products)
    }
    pub fn w_t(&self) -> usize {
        self.prod_stds() + self.n_products
    }
    pub fn z_t(&self) -> usize {
        self.w_t() + T
    }
    pub fn temp_cpc(&self) -> usize {
        self.z_t() + T
    }
    pub fn temp_stds(&self) -> usize {
        self.temp_cpc() + n_cpc(T)
    }
    pub fn w_s(&self) -> usize {
        self.temp_stds() + T
    }
    pub fn u_s(&self) -> usize {
        self.w_s() + 1
    }
    pub fn sigma_s(&self) -> usize {
        self.w_s() + 2
    }
    pub fn b(&self) -> usize {
        self.w_s() + 3
    }
    pub fn sigma_q(&self) -> usize {
        self.w_s() + 4
    }
    pub fn w_r_cell(&self) -> usize {
        self.w_s() + 5
    }

    pub fn dim(&self) -> usize {
        self.w_r_cell() + if self.hierarchical { self.n_regions * self.n_products } else { 0 }
    }

    /// Human-readable coordinate names, in layout order.
    pub fn names(&self) -> Vec<String> {
        let (n, k) = (self.n_regions, self.n_products);
        let mut v = Vec::with_capacity(self.dim());
        v.extend((0..n).map(|i| format!("w_r[{i}]")));
        v.extend((0..k).map(|j| format!("w_p[{j}]")));
        v.extend((0..k).map(|j| format!("z_p[{j}]")));
        v.extend((0..n_cpc(k)).map(|c| format!("prod_cpc[{c}]")));
        v.extend((0..k).map(|j| format!("log_prod_std[{j}]")));
        v.extend((0..T).map(|d| format!("w_t[{d}]")));
        v.extend((0..T).map(|d| format!("z_t[{d}]")));
        v.extend((0..n_cpc(T)).map(|c| format!("temp_cpc[{c}]")));
        v.extend((0..T).map(|d| format!("log_temp_std[{d}]")));
        for s in ["log_w_s", "u_s", "log_sigma_s", "b", "log_sigma_q"] {
            v.push(s.to_string());
        }
        if self.hierarchical {
            for i in 0..n {
                v.extend((0..k).map(|j| format!("w_r_cell[{i},{j}]")));
            }
        }
        v
    }
}

/// Correlation Cholesky factor from canonical partial correlations, plus the
/// log-Jacobian of `y -> L`.
pub fn corr_cholesky_from_unconstrained<S: Real>(y: &[S], d: usize, zero: S) -> (Vec<S>, S) {
    let one = zero + 1.0;
    let mut l = vec![zero; d * d];
    let mut logjac = zero;
    l[0] = one;
    let mut c = 0;
    for i in 1..d {
        let z0 = y[c].tanh();
        logjac = logjac + (-(z0 * z0)).ln_1p();
        c += 1;
        l[i * d] = z0;
        let mut sum_sq = z0 * z0;
        for j in 1..i {
            let z = y[c].tanh();
            logjac = logjac + (-(z * z)).ln_1p();
            c += 1;
            let rem = (-sum_sq).ln_1p();
            logjac = logjac + rem * 0.5;
            let v = z * (rem * 0.5).exp();
            l[i * d + j] = v;
            sum_sq = sum_sq + v * v;
        }
        l[i * d + i] = ((-sum_sq).ln_1p() * 0.5).exp();
    }
    (l, logjac)
}

/// Inverse of [`corr_cholesky_from_unconstrained`].
pub fn corr_cholesky_to_unconstrained(l: &[f64], d: usize) -> Vec<f64> {
    let mut y = Vec::with_capacity(n_cpc(d));
    for i in 1..d {
        let mut sum_sq = 0.0;
        for j in 0..i {
            let v = l[i * d + j];
            let z = if j == 0 { v } else { v / (1.0 - sum_sq).sqrt() };
            y.push(z.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh());
            sum_sq += v * v;
        }
    }
    y
}

#[inline]
fn lag_offset_scale<S: Real>(r: S) -> S {
    r / (r * r + 1.0).sqrt()
}

/// Solves `diag(c) L z = w - mean` for `z`.
fn whiten(w: &[f64], mean: &[f64], stds: &[f64], l: &[f64]) -> Vec<f64> {
    let d = w.len();
    let mut z: Vec<f64> = Vec::with_capacity(d);
    for i in 0..d {
        let mut acc = (w[i] - mean[i]) / offset_scale(stds[i]);
        for (j, zj) in z.iter().enumerate() {
            acc -= l[i * d + j] * zj;
        }
        z.push(acc / l[i * d + i]);
    }
    z
}

/// `w - diag(c) L z` and `ln |det(diag(c) L)|`.
fn group_mean<S: Real>(w: &[S], z: &[S], stds: &[S], l: &[S]) -> (Vec<S>, S) {
    let d = z.len();
    let mut logdet = z[0].lift(0.0);
    let mean = (0..d)
        .map(|i| {
            let mut acc = z[0].lift(0.0);
            for j in 0..=i {
                acc = acc + l[i * d + j] * z[j];
            }
            let c = offset_scale(stds[i]);
            logdet = logdet + c.ln() + l[i * d + i].ln();
            w[i] - c * acc
        })
        .collect();
    (mean, logdet)
}

pub fn pack(p: &ModelParams<f64>) -> Vec<f64> {
    let layout = p.layout();
    let k = p.n_products();
    let mut v = Vec::with_capacity(layout.dim());
    v.extend_from_slice(&p.w_r);
    v.extend_from_slice(&p.w_p);
    v.extend(whiten(&p.w_p, &p.mu_p, &p.prod_stds, &p.prod_corr_chol));
    v.extend(corr_cholesky_to_unconstrained(&p.prod_corr_chol, k));
    v.extend(p.prod_stds.iter().map(|s| s.ln()));
    v.extend_from_slice(&p.w_t);
    v.extend(whiten(&p.w_t, &p.mu_t, &p.temp_stds, &p.temp_corr_chol));
    v.extend(corr_cholesky_to_unconstrained(&p.temp_corr_chol, T));
    v.extend(p.temp_stds.iter().map(|s| s.ln()));
    v.push(p.w_s.ln());
    v.push((p.mu_s.ln() - p.w_s.ln()) / lag_offset_scale(p.sigma_s / p.w_s));
    v.push(p.sigma_s.ln());
    v.push(p.b);
    v.push(p.sigma_q.ln());
    if let Some(c) = &p.w_r_cell {
        v.extend_from_slice(c);
    }
    debug_assert_eq!(v.len(), layout.dim());
    v
}

/// Constrained parameters and the log-Jacobian of the transform.
pub fn unpack<S: Real>(theta: &[S], layout: &ParamLayout) -> Result<(ModelParams<S>, S)> {
    if theta.len() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "unconstrained vector has {} entries, layout expects {}",
            theta.len(),
            layout.dim()
        )));
    }
    let (n, k) = (layout.n_regions, layout.n_products);
    let zero = theta[0].lift(0.0);
    let slice = |off: usize, len: usize| theta[off..off + len].to_vec();
    let exp_block = |off: usize, len: usize| theta[off..off + len].iter().map(|x| x.exp()).collect::<Vec<S>>();

    let (prod_corr_chol, jac_p) = corr_cholesky_from_unconstrained(&theta[layout.prod_cpc()..], k, zero);
    let (temp_corr_chol, jac_t) = corr_cholesky_from_unconstrained(&theta[layout.temp_cpc()..], T, zero);

    let prod_stds = exp_block(layout.prod_stds(), k);
    let temp_stds = exp_block(layout.temp_stds(), T);
    let w_p = slice(layout.w_p(), k);
    let w_t = slice(layout.w_t(), T);
    let (mu_p, det_p) = group_mean(&w_p, &theta[layout.z_p()..layout.z_p() + k], &prod_stds, &prod_corr_chol);
    let (mu_t, det_t) = group_mean(&w_t, &theta[layout.z_t()..layout.z_t() + T], &temp_stds, &temp_corr_chol);

    let mut logjac = jac_p + jac_t + det_p + det_t;
    for idx in (layout.prod_stds()..layout.prod_stds() + k).chain(layout.temp_stds()..layout.temp_stds() + T) {
        logjac = logjac + theta[idx];
    }
    let w_s = theta[layout.w_s()].exp();
    let sigma_s = theta[layout.sigma_s()].exp();
    let a = lag_offset_scale(sigma_s / w_s);
    let ln_mu_s = theta[layout.w_s()] + a * theta[layout.u_s()];
    logjac = logjac + ln_mu_s + a.ln();
    for idx in [layout.w_s(), layout.sigma_s(), layout.sigma_q()] {
        logjac = logjac + theta[idx];
    }

    let params = ModelParams {
        w_r: slice(layout.w_r(), n),
        w_p,
        mu_p,
        prod_corr_chol,
        prod_stds,
        w_t,
        mu_t,
        temp_corr_chol,
        temp_stds,
        w_s,
        mu_s: ln_mu_s.exp(),
        sigma_s,
        b: theta[layout.b()],
        sigma_q: theta[layout.sigma_q()].exp(),
        w_r_cell: layout.hierarchical.then(|| slice(layout.w_r_cell(), n * k)),
    };
    Ok((params, logjac))
}

impl<S: Real> ModelParams<S> {
    pub fn values(&self) -> ModelParams<f64> {
        let v = |x: &Vec<S>| x.iter().map(|s| s.value()).collect::<Vec<f64>>();
        ModelParams {
            w_r: v(&self.w_r),
            w_p: v(&self.w_p),
            mu_p: v(&self.mu_p),
            prod_corr_chol: v(&self.prod_corr_chol),
            prod_stds: v(&self.prod_stds),
            w_t: v(&self.w_t),
            mu_t: v(&self.mu_t),
            temp_corr_chol: v(&self.temp_corr_chol),
            temp_stds: v(&self.temp_stds),
            w_s: self.w_s.value(),
            mu_s: self.mu_s.value(),
            sigma_s: self.sigma_s.value(),
            b: self.b.value(),
            sigma_q: self.sigma_q.value(),
            w_r_cell: self.w_r_cell.as_ref().map(v),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_dims() {
        let l = ParamLayout::new(6, 5, false);
        assert_eq!(l.dim(), 6 + 5 + 5 + 10 + 5 + 7 + 7 + 21 + 7 + 5);
        assert_eq!(l.names().len(), l.dim());
        let h = ParamLayout::new(6, 5, true);
        assert_eq!(h.dim(), l.dim() + 30);
        assert_eq!(h.names().len(), h.dim());
    }

    #[test]
    fn wrong_length_rejected() {
        let l = ParamLayout::new(2, 2, false);
        assert!(unpack(&vec![0.0; l.dim() + 1], &l).is_err());
    }

    proptest! {
        #[test]
        fn unpacked_params_are_valid_and_round_trip(
            n in 1usize..4, k in 1usize..5, hier in any::<bool>(),
            seed in proptest::collection::vec(-2.0f64..2.0, 200)
        ) {
            let layout = ParamLayout::new(n, k, hier);
            let theta: Vec<f64> = seed.iter().cycle().take(layout.dim()).copied().collect();
            let (p, logjac) = unpack(&theta, &layout).unwrap();
            prop_assert!(logjac.is_finite());
            p.validate().unwrap();
            let back = pack(&p);
            for (a, b) in back.iter().zip(&theta) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{} vs {}", a, b);
            }
        }
    }
}
