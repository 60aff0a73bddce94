use crate::features::DesignMatrix;
use crate::model::DemandModel;

/// A differentiable log density on `R^dim`.
///
/// Implementations return `-inf` (and may leave `grad` zeroed) outside the
/// support or when an intermediate value is not finite.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn logp(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.logp_grad(x, &mut g)
    }
}

/// Wraps a closure `(x, grad) -> logp`.
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

/// The demand-model posterior over a fixed design matrix.
pub struct PosteriorTarget<'a> {
    pub model: &'a DemandModel,
    pub data: &'a DesignMatrix,
}

impl LogDensity for PosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self.model.log_posterior_grad(x, self.data, grad) {
            Ok(v) => v,
            Err(_) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                f64::NEG_INFINITY
            }
        }
    }

    fn logp(&self, x: &[f64]) -> f64 {
        self.model.log_posterior(x, self.data).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Isotropic or correlated Gaussian target used by tests and benches.
pub struct GaussianTarget {
    pub mean: Vec<f64>,
    /// Row-major precision matrix.
    pub precision: Vec<f64>,
}

impl GaussianTarget {
    pub fn from_covariance(mean: Vec<f64>, cov: &[f64]) -> Self {
        let d = mean.len();
        let m = nalgebra::DMatrix::from_row_slice(d, d, cov);
        let inv = m.try_inverse().expect("invertible covariance");
        Self { mean, precision: inv.transpose().as_slice().to_vec() }
    }
}

impl LogDensity for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut quad = 0.0;
        for i in 0..d {
            let pi: f64 = (0..d).map(|j| self.precision[i * d + j] * diff[j]).sum();
            grad[i] = -pi;
            quad += diff[i] * pi;
        }
        -0.5 * quad
    }
}
