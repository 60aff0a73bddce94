use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer, OptimizerKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 128], learning_rate: 1e-3, batch_size: 32, epochs: 200 }
    }
}

/// Column means and standard deviations; constant columns keep unit scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[f64], cols: usize) -> Self {
        let rows = (x.len() / cols).max(1) as f64;
        let mut mean = vec![0.0; cols];
        let mut var = vec![0.0; cols];
        for r in x.chunks_exact(cols) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / rows;
            }
        }
        for r in x.chunks_exact(cols) {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / rows;
            }
        }
        let std = var.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let cols = self.mean.len();
        x.chunks_exact(cols)
            .flat_map(|r| r.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub net: Mlp,
    pub inputs: Standardizer,
    pub y_mean: f64,
    pub y_std: f64,
}

/// Mean squared error of `net` on a standardized batch and its gradient.
pub fn mlp_loss_grad(net: &Mlp, xb: DMatrix<f64>, yb: &[f64]) -> (f64, Mlp) {
    let cache = net.forward_batch(xb);
    let out = cache.output();
    let b = yb.len() as f64;
    let mut d = DMatrix::zeros(yb.len(), 1);
    let mut loss = 0.0;
    for (i, y) in yb.iter().enumerate() {
        let e = out[(i, 0)] - y;
        loss += e * e / b;
        d[(i, 0)] = 2.0 * e / b;
    }
    (loss, net.backward(&cache, d))
}

/// Trains a regression network with plain minibatch SGD on standardized
/// inputs and targets.
pub fn mlp_fit(x: &[f64], y: &[f64], cols: usize, cfg: &MlpConfig, seed: u64) -> Result<MlpRegressor> {
    if cols == 0 || x.len() != y.len() * cols || y.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} values for {} rows of width {cols}", x.len(), y.len())));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidInput("batch size and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sizes = vec![cols];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Mlp::new(&sizes, &mut rng)?;
    let inputs = Standardizer::fit(x, cols);
    let xs = inputs.apply(x);
    let n = y.len() as f64;
    let y_mean = y.iter().sum::<f64>() / n;
    let y_var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n;
    let y_std = if y_var > 1e-12 { y_var.sqrt() } else { 1.0 };
    let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let mut opt = Optimizer::new(OptimizerKind::Sgd, cfg.learning_rate, net.n_params());
    let mut order: Vec<usize> = (0..y.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = DMatrix::from_fn(chunk.len(), cols, |i, j| xs[chunk[i] * cols + j]);
            let yb: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (loss, grads) = mlp_loss_grad(&net, xb, &yb);
            if !loss.is_finite() {
                return Err(Error::Diverged { iterations: epoch, reason: "non-finite training loss".into() });
            }
            opt.step(&mut net, &grads);
        }
    }
    Ok(MlpRegressor { net, inputs, y_mean, y_std })
}

pub fn mlp_predict(model: &MlpRegressor, x: &[f64]) -> Result<Vec<f64>> {
    let cols = model.inputs.mean.len();
    if !x.len().is_multiple_of(cols) {
        return Err(Error::DimensionMismatch(format!("{} values are not rows of width {cols}", x.len())));
    }
    let xs = model.inputs.apply(x);
    let rows = xs.len() / cols;
    if rows == 0 {
        return Ok(Vec::new());
    }
    let cache = model.net.forward_batch(DMatrix::from_row_slice(rows, cols, &xs));
    Ok(cache.output().iter().map(|v| v * model.y_std + model.y_mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_epochs_stay_near_target_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| 10.0 + 3.0 * r[0]).collect();
        let m = mlp_fit(&x, &y, 2, &MlpConfig { epochs: 0, hidden: vec![8], ..Default::default() }, 1).unwrap();
        let p = mlp_predict(&m, &x).unwrap();
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(p.iter().all(|v| v.is_finite() && (v - m.y_mean).abs() < ymax));
    }

    #[test]
    fn learns_a_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(2).map(|r| 1.0 + 2.0 * r[0] - r[1]).collect();
        let cfg = MlpConfig { hidden: vec![16], learning_rate: 1e-2, epochs: 200, batch_size: 16 };
        let m = mlp_fit(&x, &y, 2, &cfg, 2).unwrap();
        let p = mlp_predict(&m, &x).unwrap();
        let err = p.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
        assert!(err < 0.01, "mse {err}");
    }
}
