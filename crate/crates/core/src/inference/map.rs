use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::target::LogDensity;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub max_iter: usize,
    /// Stop once the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    /// Stop once ten iterations gain less than `rel_tol * max(|logp|, 1)`.
    pub rel_tol: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self { max_iter: 10_000, grad_tol: 1e-6, rel_tol: 1e-5 }
    }
}

const GAIN_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    pub x: Vec<f64>,
    pub logp: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory curvature pairs `(s, y)` for the ascent problem.
struct History {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    memory: usize,
}

impl History {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: approximate inverse Hessian of `-f` applied to `-g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[i] = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qv, yv)| *qv -= alpha[i] * yv);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qv, sv)| *qv += (alpha[i] - beta) * sv);
        }
        q
    }
}

/// L-BFGS ascent with Armijo backtracking.
pub fn map_estimate<D: LogDensity>(target: &D, init: &[f64], cfg: &MapConfig) -> Result<MapResult> {
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::DimensionMismatch(format!("init has {} entries, target {}", init.len(), dim)));
    }
    let mut x = init.to_vec();
    let mut g = vec![0.0; dim];
    let mut f = target.logp_grad(&x, &mut g);
    if !f.is_finite() {
        return Err(Error::Diverged { iterations: 0, reason: "log density not finite at the initial point".into() });
    }
    let mut history = History { pairs: VecDeque::new(), memory: 10 };
    let mut x_new = vec![0.0; dim];
    let mut g_new = vec![0.0; dim];
    let mut iterations = 0;
    let mut recent = VecDeque::from([f]);
    let done = |x, f, iterations, g: &[f64]| {
        let gn = inf_norm(g);
        Ok(MapResult { x, logp: f, iterations, grad_norm: gn, converged: gn < cfg.grad_tol })
    };
    while iterations < cfg.max_iter {
        if inf_norm(&g) < cfg.grad_tol {
            return done(x, f, iterations, &g);
        }
        iterations += 1;
        let mut dir = history.direction(&g);
        let mut slope = dot(&dir, &g);
        if !(slope > 0.0) {
            history.pairs.clear();
            dir = g.clone();
            slope = dot(&g, &g);
        }
        let mut step = if history.pairs.is_empty() { 1.0 / inf_norm(&g).max(1.0) } else { 1.0 };
        let accepted = loop {
            for i in 0..dim {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_new = target.logp_grad(&x_new, &mut g_new);
            if f_new.is_finite() && f_new >= f + 1e-4 * step * slope {
                break Some(f_new);
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some(f_new) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                // curvature of -f
                let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
                history.push(s, y);
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                recent.push_back(f);
                if recent.len() > GAIN_WINDOW {
                    let old = recent.pop_front().expect("window is full");
                    if f - old < cfg.rel_tol * f.abs().max(1.0) {
                        return done(x, f, iterations, &g);
                    }
                }
            }
            None if !history.pairs.is_empty() => history.pairs.clear(),
            None => return done(x, f, iterations, &g),
        }
    }
    done(x, f, iterations, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::target::{FnDensity, GaussianTarget};

    #[test]
    fn finds_gaussian_mode() {
        let t = GaussianTarget::from_covariance(vec![1.0, -2.0], &[2.0, 0.5, 0.5, 1.0]);
        let cfg = MapConfig { rel_tol: 0.0, ..MapConfig::default() };
        let r = map_estimate(&t, &[5.0, 5.0], &cfg).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn converges_on_ill_conditioned_ridge() {
        let t =
            GaussianTarget::from_covariance(vec![3.0, -1.0, 0.5], &[1.0, 0.999, 0.0, 0.999, 1.0, 0.0, 0.0, 0.0, 1e-4]);
        let cfg = MapConfig { rel_tol: 0.0, ..MapConfig::default() };
        let r = map_estimate(&t, &[0.0; 3], &cfg).unwrap();
        assert!(r.converged, "{r:?}");
        assert!(r.iterations < 200, "{}", r.iterations);
        assert!((r.x[0] - 3.0).abs() < 1e-4 && (r.x[1] + 1.0).abs() < 1e-4 && (r.x[2] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn stops_on_a_slow_unbounded_climb() {
        // log density grows like ln(1 + x) without a maximum
        let t = FnDensity::new(1, |x: &[f64], g: &mut [f64]| {
            let u = x[0].abs();
            g[0] = x[0].signum() / (1.0 + u);
            u.ln_1p()
        });
        let cfg = MapConfig { grad_tol: 0.0, ..MapConfig::default() };
        let r = map_estimate(&t, &[1.0], &cfg).unwrap();
        assert!(!r.converged);
        assert!(r.iterations < cfg.max_iter);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let t = FnDensity::new(1, |_x: &[f64], _g: &mut [f64]| f64::NEG_INFINITY);
        assert!(matches!(map_estimate(&t, &[0.0], &MapConfig::default()), Err(Error::Diverged { .. })));
    }
}
