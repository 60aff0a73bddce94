//! Fully connected feed-forward networks with rectified-linear hidden layers,
//! batched backpropagation and first-order optimizers.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Column-major `inputs x outputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn w(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.weights, self.inputs, self.outputs)
    }

    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// A multilayer perceptron; the last layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Intermediate values of a batched forward pass.
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("at least the input")
    }
}

impl Mlp {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                Layer {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-limit..limit)).collect(),
                    bias: vec![0.0; w[1]],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Layer::zeros_like).collect() }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!("{} values for {} parameters", flat.len(), self.n_params())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Batched forward pass; `x` is `batch x inputs`.
    pub fn forward_batch(&self, x: DMatrix<f64>) -> ForwardCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let a = activations.last().expect("input present");
            let mut z = a * l.w();
            for mut row in z.row_iter_mut() {
                for (v, b) in row.iter_mut().zip(&l.bias) {
                    *v += b;
                }
            }
            if li != last {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        ForwardCache { activations }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let cache = self.forward_batch(DMatrix::from_row_slice(1, x.len(), x));
        cache.output().iter().copied().collect()
    }

    /// Gradients of `sum(d_out ⊙ output)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_out: DMatrix<f64>) -> Mlp {
        let mut grads = self.zeros_like();
        let mut delta = d_out;
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let a_prev = &cache.activations[li];
            let gw = a_prev.transpose() * &delta;
            let g = &mut grads.layers[li];
            DMatrixViewMut::from_slice(&mut g.weights, l.inputs, l.outputs).copy_from(&gw);
            for (b, col) in g.bias.iter_mut().zip(delta.column_iter()) {
                *b = col.sum();
            }
            if li > 0 {
                let mut d_prev = &delta * l.w().transpose();
                // ReLU derivative, using the post-activation value
                d_prev.zip_apply(a_prev, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = d_prev;
            }
        }
        grads
    }
}

/// Row-major rows into a `batch x dim` matrix.
pub fn batch_matrix(rows: &[&[f64]]) -> DMatrix<f64> {
    let dim = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Plain SGD or Adam over all network parameters.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let moments = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Self { kind, lr, m: vec![0.0; moments], v: vec![0.0; moments], t: 0 }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let (c1, c2) = (1.0 - B1.powi(self.t), 1.0 - B2.powi(self.t));
        let mut idx = 0;
        for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, gv) in l.weights.iter_mut().chain(l.bias.iter_mut()).zip(g.weights.iter().chain(&g.bias)) {
                match self.kind {
                    OptimizerKind::Sgd => *p -= self.lr * gv,
                    OptimizerKind::Adam => {
                        self.m[idx] = B1 * self.m[idx] + (1.0 - B1) * gv;
                        self.v[idx] = B2 * self.v[idx] + (1.0 - B2) * gv * gv;
                        let mh = self.m[idx] / c1;
                        let vh = self.v[idx] / c2;
                        *p -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                }
                idx += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_matches_manual_computation() {
        let net = Mlp {
            layers: vec![
                Layer { inputs: 2, outputs: 2, weights: vec![1.0, -1.0, 2.0, 0.5], bias: vec![0.0, -1.0] },
                Layer { inputs: 2, outputs: 1, weights: vec![3.0, -2.0], bias: vec![0.25] },
            ],
        };
        // hidden = relu([x0 - x1, 2 x0 + 0.5 x1 - 1])
        let x = [1.0, 2.0];
        let h = [(1.0f64 - 2.0).max(0.0), (2.0f64 + 1.0 - 1.0).max(0.0)];
        let expected = 3.0 * h[0] - 2.0 * h[1] + 0.25;
        assert_eq!(net.forward(&x), vec![expected]);
    }

    #[test]
    fn he_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[50, 10, 3], &mut rng).unwrap();
        let bound = (6.0f64 / 50.0).sqrt();
        assert!(net.layers[0].weights.iter().all(|w| w.abs() <= bound));
        assert_eq!(net.sizes(), vec![50, 10, 3]);
        assert_eq!(net.n_params(), 50 * 10 + 10 + 10 * 3 + 3);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let mut other = net.zeros_like();
        other.set_params(&net.params()).unwrap();
        assert_eq!(net, other);
    }

    #[test]
    fn zero_gradient_leaves_weights_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
        let before = net.clone();
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.1, net.n_params());
            opt.step(&mut net, &before.zeros_like());
            assert_eq!(net, before);
        }
    }
}
