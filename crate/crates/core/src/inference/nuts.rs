//! Multinomial No-U-Turn sampling with dual-averaging step size adaptation
//! and windowed mass-matrix adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnostics, ParamDiagnostics};
use super::target::LogDensity;
use crate::error::{Error, Result};
use crate::special::log_sum_exp;

/// Mass-matrix family adapted during warmup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Diag,
    #[default]
    Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NutsConfig {
    pub chains: usize,
    pub tune: usize,
    pub draws: usize,
    pub target_accept: f64,
    pub max_depth: usize,
    pub max_delta_h: f64,
    pub metric: MetricKind,
    /// Fraction of divergent post-warmup transitions above which a chain fails.
    pub max_divergent_fraction: f64,
    pub seed: u64,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            tune: 5000,
            draws: 5000,
            target_accept: 0.8,
            max_depth: 10,
            max_delta_h: 1000.0,
            metric: MetricKind::Dense,
            max_divergent_fraction: 0.25,
            seed: 0,
        }
    }
}

/// Per-chain sampler statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_accept: f64,
    pub mean_tree_depth: f64,
    pub mean_leapfrogs: f64,
    pub max_depth_hits: usize,
}

/// Post-warmup draws in unconstrained coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub dim: usize,
    pub chain_count: usize,
    pub samples_per_chain: usize,
    pub tune: usize,
    /// Row-major `(chain_count * samples_per_chain) x dim`, chain-major.
    pub draws: Vec<f64>,
    pub chain: Vec<u32>,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub chain_stats: Vec<ChainStats>,
    pub failed: bool,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.chain.len()
    }

    pub fn draw(&self, s: usize) -> &[f64] {
        &self.draws[s * self.dim..(s + 1) * self.dim]
    }

    /// All draws of one coordinate, chain-major.
    pub fn coordinate(&self, coord: usize) -> Vec<f64> {
        self.draws.iter().skip(coord).step_by(self.dim).copied().collect()
    }

    /// Draws of one chain for one coordinate.
    pub fn chain_coordinate(&self, chain: usize, coord: usize) -> Vec<f64> {
        let n = self.samples_per_chain;
        (0..n).map(|s| self.draws[(chain * n + s) * self.dim + coord]).collect()
    }

    /// `chains x draws` matrix for one coordinate.
    pub fn coordinate_by_chain(&self, coord: usize) -> Vec<Vec<f64>> {
        (0..self.chain_count).map(|c| self.chain_coordinate(c, coord)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for s in 0..self.n_draws() {
            for (a, b) in m.iter_mut().zip(self.draw(s)) {
                *a += b;
            }
        }
        let n = self.n_draws() as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    pub fn max_rhat(&self) -> Option<f64> {
        self.diagnostics.iter().filter_map(|d| d.rhat).fold(None, |acc, r| Some(acc.map_or(r, |a: f64| a.max(r))))
    }

    pub fn total_divergences(&self) -> usize {
        self.chain_stats.iter().map(|c| c.divergences).sum()
    }

    /// Assembles draws from per-chain matrices and computes diagnostics.
    pub fn from_chains(
        dim: usize,
        tune: usize,
        chains: Vec<Vec<Vec<f64>>>,
        chain_stats: Vec<ChainStats>,
        failed: bool,
    ) -> Result<Self> {
        let chain_count = chains.len();
        let samples_per_chain = chains.first().map_or(0, Vec::len);
        if chains.iter().any(|c| c.len() != samples_per_chain) {
            return Err(Error::Sampler("chains have unequal lengths".into()));
        }
        let mut draws = Vec::with_capacity(chain_count * samples_per_chain * dim);
        let mut chain = Vec::with_capacity(chain_count * samples_per_chain);
        for (c, rows) in chains.iter().enumerate() {
            for row in rows {
                if row.len() != dim || row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Sampler(format!("chain {c} produced a malformed draw")));
                }
                draws.extend_from_slice(row);
                chain.push(c as u32);
            }
        }
        let mut out = Self {
            dim,
            chain_count,
            samples_per_chain,
            tune,
            draws,
            chain,
            diagnostics: Vec::new(),
            chain_stats,
            failed,
        };
        out.diagnostics = (0..dim).map(|d| diagnostics(&out.coordinate_by_chain(d))).collect();
        Ok(out)
    }
}

#[derive(Clone, Debug)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

#[derive(Clone, Debug)]
enum Metric {
    /// Diagonal of the inverse mass matrix.
    Diag(Vec<f64>),
    /// Inverse mass matrix `S` with `S = L L^T`.
    Dense { inv: Vec<f64>, chol: Vec<f64> },
}

impl Metric {
    fn identity(dim: usize, kind: MetricKind) -> Self {
        match kind {
            MetricKind::Diag => Metric::Diag(vec![1.0; dim]),
            MetricKind::Dense => {
                let mut inv = vec![0.0; dim * dim];
                for i in 0..dim {
                    inv[i * dim + i] = 1.0;
                }
                Metric::Dense { chol: inv.clone(), inv }
            }
        }
    }

    /// Metric from a positive-definite covariance (row-major `dim x dim`).
    fn from_covariance(cov: &[f64], dim: usize, kind: MetricKind) -> Option<Self> {
        match kind {
            MetricKind::Diag => Some(Metric::Diag((0..dim).map(|i| cov[i * dim + i]).collect())),
            MetricKind::Dense => {
                let chol = crate::model::cholesky(cov, dim)?;
                Some(Metric::Dense { inv: cov.to_vec(), chol })
            }
        }
    }

    fn velocity(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Metric::Diag(d) => p.iter().zip(d).map(|(a, b)| a * b).collect(),
            Metric::Dense { inv, .. } => {
                let d = p.len();
                (0..d).map(|i| (0..d).map(|j| inv[i * d + j] * p[j]).sum()).collect()
            }
        }
    }

    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * self.velocity(p).iter().zip(p).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `p ~ N(0, M)` with `M` the inverse of the stored metric.
    fn sample_momentum<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Metric::Diag(d) => d
                .iter()
                .map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    z / v.sqrt()
                })
                .collect(),
            Metric::Dense { chol, .. } => {
                // solve L^T p = z
                let d = (chol.len() as f64).sqrt() as usize;
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let mut p = vec![0.0; d];
                for i in (0..d).rev() {
                    let mut acc = z[i];
                    for j in i + 1..d {
                        acc -= chol[j * d + i] * p[j];
                    }
                    p[i] = acc / chol[i * d + i];
                }
                p
            }
        }
    }
}

struct Integrator<'a, D: LogDensity> {
    target: &'a D,
    metric: Metric,
}

impl<D: LogDensity> Integrator<'_, D> {
    fn hamiltonian(&self, z: &Point) -> f64 {
        let h = -z.logp + self.metric.kinetic(&z.p);
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
        let v = self.metric.velocity(&z.p);
        for (q, vi) in z.q.iter_mut().zip(&v) {
            *q += eps * vi;
        }
        z.logp = self.target.logp_grad(&z.q, &mut z.grad);
        if !z.logp.is_finite() {
            z.logp = f64::NEG_INFINITY;
            return;
        }
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += 0.5 * eps * g;
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct TransitionStats {
    pub accept_prob: f64,
    pub depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

struct TreeBuilder<'a, 'r, D: LogDensity> {
    integ: &'a Integrator<'a, D>,
    rng: &'r mut ChaCha8Rng,
    eps: f64,
    max_delta_h: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

impl<D: LogDensity> TreeBuilder<'_, '_, D> {
    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut [f64],
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        log_sum_weight: &mut f64,
    ) -> bool {
        let dim = z.q.len();
        if depth == 0 {
            self.integ.leapfrog(z, sign * self.eps);
            self.n_leapfrog += 1;
            let h = self.integ.hamiltonian(z);
            if h - h0 > self.max_delta_h {
                self.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            self.sum_metro_prob += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            *z_propose = z.clone();
            *p_sharp_beg = self.integ.metric.velocity(&z.p);
            *p_sharp_end = p_sharp_beg.clone();
            add_assign(rho, &z.p);
            *p_beg = z.p.clone();
            *p_end = z.p.clone();
            return !self.divergent;
        }

        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            &mut log_sum_weight_init,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            &mut log_sum_weight_final,
        );
        if !valid_final {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        let accept = (log_sum_weight_final - log_sum_weight_subtree).exp();
        if accept >= 1.0 || self.rng.random::<f64>() < accept {
            *z_propose = z_propose_final;
        }

        let mut rho_subtree = rho_init.clone();
        add_assign(&mut rho_subtree, &rho_final);
        add_assign(rho, &rho_subtree);

        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        let mut rho_extended = rho_init;
        add_assign(&mut rho_extended, &p_final_beg);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &rho_extended);
        let mut rho_extended = rho_final;
        add_assign(&mut rho_extended, &p_init_end);
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &rho_extended);
        persist
    }
}

fn transition<D: LogDensity>(
    integ: &Integrator<'_, D>,
    rng: &mut ChaCha8Rng,
    current: &Point,
    eps: f64,
    max_depth: usize,
    max_delta_h: f64,
) -> (Point, TransitionStats) {
    let mut z = current.clone();
    z.p = integ.metric.sample_momentum(rng);
    let h0 = integ.hamiltonian(&z);

    let mut z_fwd = z.clone();
    let mut z_bck = z.clone();
    let mut z_sample = z.clone();
    let mut z_propose = z.clone();

    let p_sharp0 = integ.metric.velocity(&z.p);
    let mut p_fwd_fwd = z.p.clone();
    let mut p_sharp_fwd_fwd = p_sharp0.clone();
    let mut p_fwd_bck = z.p.clone();
    let mut p_sharp_fwd_bck = p_sharp0.clone();
    let mut p_bck_fwd = z.p.clone();
    let mut p_sharp_bck_fwd = p_sharp0.clone();
    let mut p_bck_bck = z.p.clone();
    let mut p_sharp_bck_bck = p_sharp0;

    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let dim = z.q.len();

    let mut builder =
        TreeBuilder { integ, rng, eps, max_delta_h, n_leapfrog: 0, sum_metro_prob: 0.0, divergent: false };

    let mut depth = 0;
    while depth < max_depth {
        let mut rho_fwd = vec![0.0; dim];
        let mut rho_bck = vec![0.0; dim];
        let mut log_sum_weight_subtree = f64::NEG_INFINITY;
        let valid_subtree;
        if builder.rng.random::<f64>() > 0.5 {
            let mut zc = z_fwd.clone();
            rho_bck.clone_from(&rho);
            p_bck_fwd.clone_from(&p_fwd_bck);
            p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
            valid_subtree = builder.build_tree(
                depth,
                &mut zc,
                &mut z_propose,
                &mut p_sharp_fwd_bck,
                &mut p_sharp_fwd_fwd,
                &mut rho_fwd,
                &mut p_fwd_bck,
                &mut p_fwd_fwd,
                h0,
                1.0,
                &mut log_sum_weight_subtree,
            );
            z_fwd = zc;
        } else {
            let mut zc = z_bck.clone();
            rho_fwd.clone_from(&rho);
            p_fwd_bck.clone_from(&p_bck_fwd);
            p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
            valid_subtree = builder.build_tree(
                depth,
                &mut zc,
                &mut z_propose,
                &mut p_sharp_bck_fwd,
                &mut p_sharp_bck_bck,
                &mut rho_bck,
                &mut p_bck_fwd,
                &mut p_bck_bck,
                h0,
                -1.0,
                &mut log_sum_weight_subtree,
            );
            z_bck = zc;
        }
        if !valid_subtree {
            break;
        }
        depth += 1;

        if log_sum_weight_subtree > log_sum_weight {
            z_sample = z_propose.clone();
        } else {
            let accept = (log_sum_weight_subtree - log_sum_weight).exp();
            if builder.rng.random::<f64>() < accept {
                z_sample = z_propose.clone();
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

        rho = rho_bck.clone();
        add_assign(&mut rho, &rho_fwd);
        let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
        let mut rho_extended = rho_bck;
        add_assign(&mut rho_extended, &p_fwd_bck);
        persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_extended);
        let mut rho_extended = rho_fwd;
        add_assign(&mut rho_extended, &p_bck_fwd);
        persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_extended);
        if !persist {
            break;
        }
    }

    let n_leapfrog = builder.n_leapfrog.max(1);
    let stats = TransitionStats {
        accept_prob: builder.sum_metro_prob / n_leapfrog as f64,
        depth,
        n_leapfrog: builder.n_leapfrog,
        divergent: builder.divergent,
    };
    (z_sample, stats)
}

/// Dual-averaging step-size adaptation.
#[derive(Clone, Debug)]
struct StepSizeAdapter {
    mu: f64,
    target: f64,
    gamma: f64,
    kappa: f64,
    t0: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    fn new(target: f64) -> Self {
        Self { mu: 0.0, target, gamma: 0.05, kappa: 0.75, t0: 10.0, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + self.t0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / self.gamma;
        let x_eta = self.counter.powf(-self.kappa);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: fast initial buffer, doubling slow windows, fast
/// terminal buffer.
#[derive(Clone, Debug)]
struct WindowSchedule {
    num_warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl WindowSchedule {
    fn new(num_warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base) = (75, 50, 25);
        if num_warmup < 20 {
            return Self {
                num_warmup,
                init_buffer: num_warmup,
                term_buffer: 0,
                window_size: 0,
                next_window: usize::MAX,
                counter: 0,
            };
        }
        if init_buffer + base + term_buffer > num_warmup {
            init_buffer = (0.15 * num_warmup as f64) as usize;
            term_buffer = (0.1 * num_warmup as f64) as usize;
            base = num_warmup - (init_buffer + term_buffer);
        }
        Self {
            num_warmup,
            init_buffer,
            term_buffer,
            window_size: base,
            next_window: init_buffer + base - 1,
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer
            && self.counter < self.num_warmup - self.term_buffer
            && self.counter != self.num_warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.num_warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.num_warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Running mean and covariance (or variance) of warmup positions.
#[derive(Clone, Debug)]
struct MetricEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    dense: bool,
    /// Covariance the estimate is shrunk toward, weighted as `dim` pseudo-draws.
    anchor: Option<Vec<f64>>,
}

impl MetricEstimator {
    fn new(dim: usize, dense: bool, anchor: Option<Vec<f64>>) -> Self {
        Self { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; if dense { dim * dim } else { dim }], dense, anchor }
    }

    fn restart(&mut self) {
        self.n = 0.0;
        self.mean.iter_mut().for_each(|v| *v = 0.0);
        self.m2.iter_mut().for_each(|v| *v = 0.0);
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1.0;
        let d = q.len();
        let delta: Vec<f64> = q.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / self.n;
        }
        if self.dense {
            for i in 0..d {
                let after_i = q[i] - self.mean[i];
                for j in 0..d {
                    self.m2[i * d + j] += after_i * delta[j];
                }
            }
        } else {
            for i in 0..d {
                self.m2[i] += delta[i] * (q[i] - self.mean[i]);
            }
        }
    }

    /// Regularized estimate, shrunk toward the anchor covariance when one
    /// is set and toward `1e-3 * I` otherwise.
    fn metric(&self) -> Metric {
        let d = self.mean.len();
        let n = self.n;
        let prior_n = if self.anchor.is_some() { d as f64 } else { 5.0 };
        let w = n / (n + prior_n);
        let target = |i: usize, j: usize| match &self.anchor {
            Some(a) => a[i * d + j],
            None if i == j => 1e-3,
            None => 0.0,
        };
        if self.dense {
            let mut inv = vec![0.0; d * d];
            for i in 0..d {
                for j in 0..d {
                    let c = 0.5 * (self.m2[i * d + j] + self.m2[j * d + i]) / (n - 1.0);
                    inv[i * d + j] = w * c + (1.0 - w) * target(i, j);
                }
            }
            match crate::model::cholesky(&inv, d) {
                Some(chol) => Metric::Dense { inv, chol },
                None => Metric::Diag((0..d).map(|i| inv[i * d + i]).collect()),
            }
        } else {
            Metric::Diag(
                self.m2.iter().enumerate().map(|(i, m)| w * m / (n - 1.0) + (1.0 - w) * target(i, i)).collect(),
            )
        }
    }
}

fn init_step_size<D: LogDensity>(integ: &Integrator<'_, D>, rng: &mut ChaCha8Rng, z0: &Point, mut eps: f64) -> f64 {
    let log_08 = 0.8f64.ln();
    let mut z = z0.clone();
    z.p = integ.metric.sample_momentum(rng);
    let h0 = integ.hamiltonian(&z);
    integ.leapfrog(&mut z, eps);
    let delta_h = h0 - integ.hamiltonian(&z);
    let direction = if delta_h > log_08 { 1.0 } else { -1.0 };
    for _ in 0..100 {
        let mut z = z0.clone();
        z.p = integ.metric.sample_momentum(rng);
        let h0 = integ.hamiltonian(&z);
        integ.leapfrog(&mut z, eps);
        let delta_h = h0 - integ.hamiltonian(&z);
        if direction > 0.0 && !(delta_h > log_08) {
            break;
        }
        if direction < 0.0 && !(delta_h < log_08) {
            break;
        }
        eps = if direction > 0.0 { 2.0 * eps } else { 0.5 * eps };
        if !(1e-12..=1e7).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-12, 1e7)
}

/// Output of one chain.
pub(crate) struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

pub(crate) fn run_chain<D: LogDensity>(
    target: &D,
    init: &[f64],
    cfg: &NutsConfig,
    chain_id: usize,
    covariance: Option<&[f64]>,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain_id as u64 + 1);

    let mut grad = vec![0.0; dim];
    let logp = target.logp_grad(init, &mut grad);
    if !logp.is_finite() {
        return Err(Error::Sampler(format!("chain {chain_id}: initial point has non-finite log density")));
    }
    let mut z = Point { q: init.to_vec(), p: vec![0.0; dim], grad, logp };
    let initial = covariance.and_then(|c| Metric::from_covariance(c, dim, cfg.metric));
    let anchor = initial.as_ref().and(covariance).map(<[f64]>::to_vec);
    let mut integ = Integrator { target, metric: initial.unwrap_or_else(|| Metric::identity(dim, cfg.metric)) };

    let mut eps = init_step_size(&integ, &mut rng, &z, 1.0);
    let mut adapter = StepSizeAdapter::new(cfg.target_accept);
    adapter.restart(eps);
    let mut schedule = WindowSchedule::new(cfg.tune);
    let mut estimator = MetricEstimator::new(dim, cfg.metric == MetricKind::Dense, anchor);

    for _ in 0..cfg.tune {
        let (next, stats) = transition(&integ, &mut rng, &z, eps, cfg.max_depth, cfg.max_delta_h);
        z = next;
        eps = adapter.learn(stats.accept_prob);

        if schedule.in_window() {
            estimator.add(&z.q);
        }
        if schedule.end_of_window() {
            schedule.compute_next_window();
            integ.metric = estimator.metric();
            estimator.restart();
            eps = init_step_size(&integ, &mut rng, &z, eps);
            adapter.restart(eps);
        }
        schedule.counter += 1;
    }
    if cfg.tune > 0 {
        eps = adapter.final_step();
    }

    let mut draws = Vec::with_capacity(cfg.draws);
    let (mut divergences, mut accept, mut depth_sum, mut leapfrogs, mut depth_hits) = (0, 0.0, 0, 0, 0);
    for _ in 0..cfg.draws {
        let (next, stats) = transition(&integ, &mut rng, &z, eps, cfg.max_depth, cfg.max_delta_h);
        z = next;
        divergences += usize::from(stats.divergent);
        accept += stats.accept_prob;
        depth_sum += stats.depth;
        leapfrogs += stats.n_leapfrog;
        depth_hits += usize::from(stats.depth >= cfg.max_depth);
        draws.push(z.q.clone());
    }
    let n = cfg.draws.max(1) as f64;
    Ok(ChainOutput {
        draws,
        stats: ChainStats {
            step_size: eps,
            divergences,
            mean_accept: accept / n,
            mean_tree_depth: depth_sum as f64 / n,
            mean_leapfrogs: leapfrogs as f64 / n,
            max_depth_hits: depth_hits,
        },
    })
}

/// Runs `cfg.chains` independent chains, one initial point each.
pub fn nuts_sample<D: LogDensity>(target: &D, inits: &[Vec<f64>], cfg: &NutsConfig) -> Result<PosteriorDraws> {
    nuts_sample_with_metric(target, inits, cfg, None)
}

/// As [`nuts_sample`], starting adaptation from a covariance guess
/// (row-major `dim x dim`, e.g. an inverse Hessian) instead of the identity.
pub fn nuts_sample_with_metric<D: LogDensity>(
    target: &D,
    inits: &[Vec<f64>],
    cfg: &NutsConfig,
    covariance: Option<&[f64]>,
) -> Result<PosteriorDraws> {
    if covariance.is_some_and(|c| c.len() != target.dim() * target.dim()) {
        return Err(Error::Sampler("initial covariance does not match the target dimension".into()));
    }
    if inits.len() != cfg.chains || cfg.chains == 0 {
        return Err(Error::Sampler(format!("need {} initial points, got {}", cfg.chains, inits.len())));
    }
    if inits.iter().any(|x| x.len() != target.dim() || x.iter().any(|v| !v.is_finite())) {
        return Err(Error::Sampler("initial points must be finite and match the target dimension".into()));
    }
    let outputs: Vec<Result<ChainOutput>> =
        inits.par_iter().enumerate().map(|(c, init)| run_chain(target, init, cfg, c, covariance)).collect();
    let mut chains = Vec::with_capacity(cfg.chains);
    let mut stats = Vec::with_capacity(cfg.chains);
    for out in outputs {
        let out = out?;
        chains.push(out.draws);
        stats.push(out.stats);
    }
    let failed = stats.iter().any(|s| s.divergences as f64 > cfg.max_divergent_fraction * cfg.draws as f64);
    PosteriorDraws::from_chains(target.dim(), cfg.tune, chains, stats, failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::target::GaussianTarget;

    #[test]
    fn window_schedule_matches_reference_boundaries() {
        // 1000 warmup iterations: windows end at 99, 149, 249, 449, 949
        let mut s = WindowSchedule::new(1000);
        let mut ends = Vec::new();
        for _ in 0..1000 {
            if s.end_of_window() {
                ends.push(s.counter);
                s.compute_next_window();
            }
            s.counter += 1;
        }
        assert_eq!(ends, vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn leapfrog_conserves_energy_with_small_steps() {
        let target = GaussianTarget::from_covariance(vec![0.5, -1.0], &[1.0, 0.3, 0.3, 2.0]);
        let integ = Integrator { target: &target, metric: Metric::identity(2, MetricKind::Diag) };
        let mut grad = vec![0.0; 2];
        let q = vec![1.0, 0.2];
        let logp = target.logp_grad(&q, &mut grad);
        let mut z = Point { q, p: vec![0.7, -0.4], grad, logp };
        let h0 = integ.hamiltonian(&z);
        for _ in 0..100 {
            integ.leapfrog(&mut z, 1e-4);
        }
        assert!((integ.hamiltonian(&z) - h0).abs() < 1e-6);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = GaussianTarget::from_covariance(vec![0.0, 0.0], &[1.0, 0.5, 0.5, 1.0]);
        let integ = Integrator { target: &target, metric: Metric::Diag(vec![0.5, 2.0]) };
        let mut grad = vec![0.0; 2];
        let q = vec![0.3, -0.2];
        let logp = target.logp_grad(&q, &mut grad);
        let start = Point { q, p: vec![0.1, 0.9], grad, logp };
        let mut z = start.clone();
        for _ in 0..20 {
            integ.leapfrog(&mut z, 0.1);
        }
        z.p.iter_mut().for_each(|p| *p = -*p);
        for _ in 0..20 {
            integ.leapfrog(&mut z, 0.1);
        }
        for i in 0..2 {
            assert!((z.q[i] - start.q[i]).abs() < 1e-12);
            assert!((z.p[i] + start.p[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_seed_is_bitwise_reproducible() {
        let target =
            GaussianTarget::from_covariance(vec![1.0, 2.0, 3.0], &[1.0, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 1.0]);
        let cfg = NutsConfig { chains: 2, tune: 200, draws: 100, seed: 42, ..Default::default() };
        let inits = vec![vec![0.0; 3], vec![0.5; 3]];
        let a = nuts_sample(&target, &inits, &cfg).unwrap();
        let b = nuts_sample(&target, &inits, &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = nuts_sample(&target, &inits, &NutsConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn dense_metric_samples_correlated_gaussian() {
        let target = GaussianTarget::from_covariance(vec![0.0, 0.0], &[1.0, 0.99, 0.99, 1.0]);
        let cfg =
            NutsConfig { chains: 1, tune: 500, draws: 2000, seed: 3, metric: MetricKind::Dense, ..Default::default() };
        let d = nuts_sample(&target, &[vec![0.1, -0.1]], &cfg).unwrap();
        assert!(d.chain_stats[0].mean_tree_depth < 3.5, "{:?}", d.chain_stats[0]);
        let m = d.mean();
        assert!(m[0].abs() < 0.15 && m[1].abs() < 0.15, "{m:?}");
    }
}
