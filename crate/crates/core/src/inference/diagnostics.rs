//! Convergence diagnostics: split potential scale reduction and
//! rank-normalized bulk effective sample size.

use serde::{Deserialize, Serialize};

use crate::special::norm_ppf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    /// `None` when fewer than two split halves are available or the draws are constant.
    pub rhat: Option<f64>,
    /// `None` when the draws have no variance.
    pub ess_bulk: Option<f64>,
}

pub fn diagnostics(chains: &[Vec<f64>]) -> ParamDiagnostics {
    ParamDiagnostics { rhat: split_rhat(chains), ess_bulk: Some(ess_bulk(chains)).filter(|e| e.is_finite()) }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Splits each chain into two halves, dropping the middle draw of odd lengths.
pub fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Classic potential scale reduction of a set of equal-length chains.
pub fn rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let m = chains.len();
    let n = chains.first()?.len();
    if m < 2 || n < 2 || chains.iter().any(|c| c.len() != n) {
        return None;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    let b = n as f64 * var(&means);
    if !(w > 0.0) {
        return if b == 0.0 { Some(1.0) } else { None };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b / n as f64;
    Some((var_plus / w).sqrt())
}

pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    rhat(&split_chains(chains))
}

/// Biased autocovariance of one chain at lags `0..n`.
fn autocov(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..max_lag.min(n)).map(|t| c[..n - t].iter().zip(&c[t..]).map(|(a, b)| a * b).sum::<f64>() / n as f64).collect()
}

/// Effective sample size with Geyer's initial monotone sequence estimator.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.first().map_or(0, Vec::len);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let total = (m * n) as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mut acov: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut computed = 0usize;
    let ensure = |acov: &mut Vec<Vec<f64>>, computed: &mut usize, upto: usize| {
        if upto > *computed {
            // grow geometrically to keep the lazy evaluation cheap
            let target = upto.max(2 * *computed).max(64).min(n);
            for (a, c) in acov.iter_mut().zip(chains) {
                *a = autocov(c, target);
            }
            *computed = target;
        }
    };
    ensure(&mut acov, &mut computed, 2);
    let mean_var = acov.iter().map(|a| a[0]).sum::<f64>() / m as f64 * n as f64 / (n as f64 - 1.0);
    let mut var_plus = mean_var * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        var_plus += var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho_at = |acov: &Vec<Vec<f64>>, t: usize| -> f64 {
        let avg = acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
        1.0 - (mean_var - avg) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    let mut t = 0usize;
    let mut rho_even = 1.0;
    ensure(&mut acov, &mut computed, 2);
    let mut rho_odd = rho_at(&acov, 1);
    while t < n - 3 && rho_even + rho_odd > 0.0 {
        rho_hat[t] = rho_even;
        rho_hat[t + 1] = rho_odd;
        t += 2;
        ensure(&mut acov, &mut computed, t + 2);
        rho_even = rho_at(&acov, t);
        rho_odd = rho_at(&acov, t + 1);
    }
    let max_t = t.saturating_sub(2);
    if rho_even > 0.0 && max_t + 2 < n {
        rho_hat[max_t + 2] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            let avg = 0.5 * (rho_hat[t - 1] + rho_hat[t]);
            rho_hat[t + 1] = avg;
            rho_hat[t + 2] = avg;
        }
        t += 2;
    }
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = -1.0 + 2.0 * rho_hat[..=max_t.min(n - 1)].iter().sum::<f64>() + tail;
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Replaces draws by normal scores of their pooled fractional ranks.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> =
        chains.iter().enumerate().flat_map(|(c, v)| v.iter().enumerate().map(move |(i, x)| (*x, c, i))).collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = idx.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        // average rank of the tie group, 1-based
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = norm_ppf((rank - 0.375) / (s + 0.25));
        for e in &idx[i..=j] {
            out[e.1][e.2] = z;
        }
        i = j + 1;
    }
    out
}

pub fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    ess(&rank_normalize(&split_chains(chains)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(seed: u64, chains: usize, n: usize, shift: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..chains)
            .map(|c| {
                (0..n)
                    .map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng) + shift * c as f64)
                    .collect::<Vec<f64>>()
            })
            .collect()
    }

    #[test]
    fn iid_draws_have_full_ess() {
        let chains = iid(1, 4, 2000, 0.0);
        let e = ess_bulk(&chains);
        assert!((e / 8000.0 - 1.0).abs() < 0.2, "ess {e}");
        let r = split_rhat(&chains).unwrap();
        assert!((r - 1.0).abs() < 0.01, "rhat {r}");
    }

    #[test]
    fn shifted_chains_are_flagged() {
        let chains = iid(2, 4, 1000, 1.0);
        assert!(split_rhat(&chains).unwrap() > 1.1);
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // ESS of AR(1) with coefficient phi is n (1 - phi) / (1 + phi)
        let phi: f64 = 0.8;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..20_000)
                    .map(|_| {
                        let e: f64 = StandardNormal.sample(&mut rng);
                        x = phi * x + (1.0 - phi * phi).sqrt() * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let expected = 80_000.0 * (1.0 - phi) / (1.0 + phi);
        let e = ess(&chains);
        assert!((e / expected - 1.0).abs() < 0.15, "{e} vs {expected}");
    }

    #[test]
    fn rank_normalization_handles_ties() {
        let z = rank_normalize(&[vec![1.0, 1.0, 2.0], vec![0.0, 2.0, 3.0]]);
        assert_eq!(z[0][0], z[0][1]);
        assert_eq!(z[0][2], z[1][1]);
        assert!(z[1][0] < z[0][0] && z[1][2] > z[0][2]);
    }
}
