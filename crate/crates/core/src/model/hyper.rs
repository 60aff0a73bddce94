use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::retail::DAYS_PER_WEEK;

/// Prior hyperparameters. [`Hyperparams::defaults`] gives the standard
/// prior settings; `b_scale` and `lkj_eta` are local choices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub mu_r: Vec<f64>,
    /// Region prior covariance is `gamma_r * I`.
    pub gamma_r: f64,
    pub delta_p: Vec<f64>,
    /// Row-major `k x k`.
    pub gamma_p: Vec<f64>,
    /// Half-Cauchy scale of the product standard deviations.
    pub sigma_p: f64,
    pub delta_t: Vec<f64>,
    /// Row-major `7 x 7`.
    pub gamma_t: Vec<f64>,
    pub sigma_t: f64,
    pub phi_s: f64,
    pub psi_s: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
    pub b_scale: f64,
    pub lkj_eta: f64,
}

fn scaled_identity(d: usize, s: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = s;
    }
    m
}

impl Hyperparams {
    pub fn defaults(n: usize, k: usize) -> Self {
        Self {
            mu_r: vec![0.0; n],
            gamma_r: 25.0,
            delta_p: vec![2.5; k],
            gamma_p: scaled_identity(k, 25.0),
            sigma_p: 2.5,
            delta_t: vec![5.0, 5.0, 5.0, 5.0, 10.0, 15.0, 0.0],
            gamma_t: scaled_identity(DAYS_PER_WEEK, 10.0),
            sigma_t: 2.5,
            phi_s: 1.0,
            psi_s: 2.5,
            alpha_q: 1.0,
            beta_q: 1.0,
            b_scale: 10.0,
            lkj_eta: 2.0,
        }
    }

    pub fn n_regions(&self) -> usize {
        self.mu_r.len()
    }

    pub fn n_products(&self) -> usize {
        self.delta_p.len()
    }

    /// Replaces `gamma_p` by `s * I` (config files only carry the scale).
    pub fn set_gamma_p_scale(&mut self, s: f64) {
        self.gamma_p = scaled_identity(self.n_products(), s);
    }

    pub fn set_gamma_t_scale(&mut self, s: f64) {
        self.gamma_t = scaled_identity(DAYS_PER_WEEK, s);
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_products();
        if self.delta_t.len() != DAYS_PER_WEEK {
            return Err(Error::InvalidInput("delta_t must have 7 entries".into()));
        }
        if self.gamma_p.len() != k * k || self.gamma_t.len() != DAYS_PER_WEEK * DAYS_PER_WEEK {
            return Err(Error::DimensionMismatch("prior covariance shape".into()));
        }
        let scales = [
            ("gamma_r", self.gamma_r),
            ("sigma_p", self.sigma_p),
            ("sigma_t", self.sigma_t),
            ("phi_s", self.phi_s),
            ("psi_s", self.psi_s),
            ("alpha_q", self.alpha_q),
            ("beta_q", self.beta_q),
            ("b_scale", self.b_scale),
            ("lkj_eta", self.lkj_eta),
        ];
        for (name, v) in scales {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, m, d) in [("gamma_p", &self.gamma_p, k), ("gamma_t", &self.gamma_t, DAYS_PER_WEEK)] {
            if cholesky(m, d).is_none() {
                return Err(Error::InvalidInput(format!("{name} is not positive definite")));
            }
        }
        Ok(())
    }
}

/// Lower Cholesky factor of a row-major symmetric matrix.
pub(crate) fn cholesky(m: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i * d + j];
            for p in 0..j {
                s -= l[i * d + p] * l[j * d + p];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_standard_priors() {
        let h = Hyperparams::defaults(17, 15);
        assert_eq!(h.mu_r, vec![0.0; 17]);
        assert_eq!(h.gamma_r, 25.0);
        assert_eq!(h.delta_p, vec![2.5; 15]);
        assert_eq!(h.gamma_p[0], 25.0);
        assert_eq!(h.gamma_p[1], 0.0);
        assert_eq!(h.sigma_p, 2.5);
        assert_eq!(h.phi_s, 1.0);
        assert_eq!(h.psi_s, 2.5);
        assert_eq!(h.delta_t, vec![5.0, 5.0, 5.0, 5.0, 10.0, 15.0, 0.0]);
        assert_eq!(h.gamma_t[8], 10.0);
        assert_eq!(h.sigma_t, 2.5);
        assert_eq!((h.alpha_q, h.beta_q), (1.0, 1.0));
        h.validate().unwrap();
    }

    #[test]
    fn rejects_non_positive_scale() {
        let mut h = Hyperparams::defaults(2, 2);
        h.psi_s = 0.0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn cholesky_reconstructs() {
        let m = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&m, 2).unwrap();
        assert!((l[0] * l[0] - 4.0).abs() < 1e-12);
        assert!((l[2] * l[0] - 2.0).abs() < 1e-12);
        assert!((l[2] * l[2] + l[3] * l[3] - 3.0).abs() < 1e-12);
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
