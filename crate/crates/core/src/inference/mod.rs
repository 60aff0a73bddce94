//! Posterior fitting: MAP and ADVI initialization, NUTS sampling,
//! convergence diagnostics and posterior-predictive revenue.

mod advi;
pub mod diagnostics;
mod map;
mod nuts;
mod predict;
mod target;

pub use advi::{advi_fit, AdviConfig, AdviResult};
pub use diagnostics::{ess, ess_bulk, rhat, split_rhat, ParamDiagnostics};
pub use map::{map_estimate, MapConfig, MapResult};
pub use nuts::{nuts_sample, nuts_sample_with_metric, ChainStats, MetricKind, NutsConfig, PosteriorDraws};
pub use predict::{
    predict_revenue, predict_revenue_params, quantile_sorted, thin_indices, DailyPrediction, IntervalSummary,
    PredictionSummary, RowPrediction,
};
pub use target::{FnDensity, GaussianTarget, LogDensity, PosteriorTarget};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::DesignMatrix;
use crate::model::{unpack, DemandModel, ModelParams, ParamLayout};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    #[default]
    Map,
    Advi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Full-length run: 4 chains, 5000 tuning and 5000 kept draws each.
    Paper,
    /// Reduced run: 2 chains, 1000 tuning and 1000 kept draws each.
    Desk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub nuts: NutsConfig,
    pub init: InitMethod,
    pub map: MapConfig,
    pub advi: AdviConfig,
    /// Standard deviation of the per-chain perturbation around the MAP point.
    pub jitter: f64,
    /// Draws used for posterior-predictive summaries.
    pub predict_draws: usize,
}

impl FitConfig {
    pub fn preset(preset: Preset, seed: u64) -> Self {
        let nuts = match preset {
            Preset::Paper => NutsConfig { seed, ..NutsConfig::default() },
            Preset::Desk => NutsConfig { chains: 2, tune: 1000, draws: 1000, seed, ..NutsConfig::default() },
        };
        let init = match preset {
            Preset::Paper => InitMethod::Advi,
            Preset::Desk => InitMethod::Map,
        };
        Self {
            nuts,
            init,
            map: MapConfig::default(),
            advi: AdviConfig { seed, ..AdviConfig::default() },
            jitter: 0.1,
            predict_draws: 500,
        }
    }
}

/// Initial points for each chain.
pub fn initial_points<D: LogDensity>(target: &D, cfg: &FitConfig) -> Result<Vec<Vec<f64>>> {
    Ok(initial_points_and_center(target, cfg)?.0)
}

/// Initial points plus the MAP or ADVI center they were drawn around.
fn initial_points_and_center<D: LogDensity>(target: &D, cfg: &FitConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.nuts.seed ^ 0x5eed_1417);
    let origin = vec![0.0; dim];
    let (center, scale) = match cfg.init {
        InitMethod::Map => {
            let m = map_estimate(target, &origin, &cfg.map)?;
            (m.x, vec![cfg.jitter; dim])
        }
        InitMethod::Advi => {
            let a = advi_fit(target, &origin, &cfg.advi)?;
            let sd = a.std();
            (a.mean, sd)
        }
    };
    let mut out = Vec::with_capacity(cfg.nuts.chains);
    for _ in 0..cfg.nuts.chains {
        // redraw perturbations that land outside the support
        let mut point = center.clone();
        for _ in 0..100 {
            let cand: Vec<f64> =
                center.iter().zip(&scale).map(|(c, s)| c + s * rng.sample::<f64, _>(StandardNormal)).collect();
            if target.logp(&cand).is_finite() {
                point = cand;
                break;
            }
        }
        out.push(point);
    }
    Ok((out, center))
}

/// Inverse of the negative Hessian of the log density at `x`, by central
/// differences of the gradient. `None` unless it is positive definite.
pub fn laplace_covariance<D: LogDensity>(target: &D, x: &[f64]) -> Option<Vec<f64>> {
    let d = target.dim();
    let mut h = nalgebra::DMatrix::<f64>::zeros(d, d);
    let (mut gp, mut gm) = (vec![0.0; d], vec![0.0; d]);
    let mut probe = x.to_vec();
    for j in 0..d {
        let step = 1e-5 * x[j].abs().max(1.0);
        probe[j] = x[j] + step;
        let fp = target.logp_grad(&probe, &mut gp);
        probe[j] = x[j] - step;
        let fm = target.logp_grad(&probe, &mut gm);
        probe[j] = x[j];
        if !(fp.is_finite() && fm.is_finite()) {
            return None;
        }
        for i in 0..d {
            h[(i, j)] = -(gp[i] - gm[i]) / (2.0 * step);
        }
    }
    let sym = (&h + h.transpose()) * 0.5;
    let cov = sym.cholesky()?.inverse();
    cov.iter().all(|v| v.is_finite()).then(|| cov.as_slice().to_vec())
}

/// Fits the demand model to a design matrix.
pub fn fit_model(model: &DemandModel, data: &DesignMatrix, cfg: &FitConfig) -> Result<PosteriorDraws> {
    let target = PosteriorTarget { model, data };
    let (inits, center) = initial_points_and_center(&target, cfg)?;
    let cov = laplace_covariance(&target, &center);
    nuts_sample_with_metric(&target, &inits, &cfg.nuts, cov.as_deref())
}

/// Constrained parameters of every draw.
pub fn constrained_draws(draws: &PosteriorDraws, layout: &ParamLayout) -> Result<Vec<ModelParams>> {
    (0..draws.n_draws()).map(|s| unpack(draws.draw(s), layout).map(|(p, _)| p)).collect()
}

/// Element-wise posterior mean of the constrained parameters.
///
/// Averaged Cholesky factors are reported as-is and need not be valid
/// correlation factors.
pub fn posterior_mean_params(draws: &PosteriorDraws, layout: &ParamLayout) -> Result<ModelParams> {
    let n = draws.n_draws();
    let mut acc: Vec<f64> = Vec::new();
    let mut template: Option<ModelParams> = None;
    for s in 0..n {
        let (p, _) = unpack(draws.draw(s), layout)?;
        let flat = flatten(&p);
        if acc.is_empty() {
            acc = vec![0.0; flat.len()];
        }
        for (a, v) in acc.iter_mut().zip(&flat) {
            *a += v;
        }
        template.get_or_insert(p);
    }
    let mut template = template.ok_or_else(|| crate::Error::InvalidInput("no posterior draws".into()))?;
    acc.iter_mut().for_each(|v| *v /= n as f64);
    unflatten(&mut template, &acc);
    Ok(template)
}

fn fields_mut(p: &mut ModelParams) -> Vec<&mut Vec<f64>> {
    let mut v = vec![
        &mut p.w_r,
        &mut p.w_p,
        &mut p.mu_p,
        &mut p.prod_corr_chol,
        &mut p.prod_stds,
        &mut p.w_t,
        &mut p.mu_t,
        &mut p.temp_corr_chol,
        &mut p.temp_stds,
    ];
    if let Some(c) = p.w_r_cell.as_mut() {
        v.push(c);
    }
    v
}

fn flatten(p: &ModelParams) -> Vec<f64> {
    let mut p = p.clone();
    let mut out: Vec<f64> = vec![p.w_s, p.mu_s, p.sigma_s, p.b, p.sigma_q];
    for f in fields_mut(&mut p) {
        out.extend_from_slice(f);
    }
    out
}

fn unflatten(p: &mut ModelParams, flat: &[f64]) {
    p.w_s = flat[0];
    p.mu_s = flat[1];
    p.sigma_s = flat[2];
    p.b = flat[3];
    p.sigma_q = flat[4];
    let mut at = 5;
    for f in fields_mut(p) {
        let len = f.len();
        f.copy_from_slice(&flat[at..at + len]);
        at += len;
    }
}
