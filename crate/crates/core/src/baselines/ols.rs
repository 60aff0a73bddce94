use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RIDGE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    pub weights: Vec<f64>,
}

/// Least squares on row-major `x` (`rows x cols`). Uses the minimum-norm SVD
/// solution when `rows >= cols` and a ridge-regularized solve otherwise.
pub fn ols_fit(x: &[f64], y: &[f64], cols: usize) -> Result<OlsModel> {
    let rows = y.len();
    if cols == 0 || x.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!("{} values for {rows} x {cols}", x.len())));
    }
    if rows == 0 {
        return Err(Error::InvalidInput("least squares needs at least one row".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares input".into()));
    }
    let a = DMatrix::from_row_slice(rows, cols, x);
    let b = DVector::from_column_slice(y);
    let w = if rows >= cols {
        let svd = a.svd(true, true);
        let tol = svd.singular_values.max() * rows.max(cols) as f64 * f64::EPSILON;
        svd.solve(&b, tol).map_err(|e| Error::InvalidInput(e.to_string()))?
    } else {
        let mut g = a.transpose() * &a;
        for i in 0..cols {
            g[(i, i)] += RIDGE_FLOOR;
        }
        let rhs = a.transpose() * &b;
        g.cholesky().ok_or_else(|| Error::InvalidInput("ridge system not positive definite".into()))?.solve(&rhs)
    };
    Ok(OlsModel { weights: w.iter().copied().collect() })
}

/// Linear predictions clamped below at zero.
pub fn ols_predict(model: &OlsModel, x: &[f64]) -> Result<Vec<f64>> {
    let cols = model.weights.len();
    if !x.len().is_multiple_of(cols) {
        return Err(Error::DimensionMismatch(format!("{} values are not rows of width {cols}", x.len())));
    }
    Ok(x.chunks_exact(cols).map(|r| r.iter().zip(&model.weights).map(|(a, w)| a * w).sum::<f64>().max(0.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exactly_determined_system() {
        let m = ols_fit(&[2.0, 1.0, 1.0, 3.0], &[5.0, 10.0], 2).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        assert!((m.weights[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = [0.5, 2.0, 1.5, 3.0];
        let x: Vec<f64> = (0..50 * 4).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.chunks(4).map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect();
        let m = ols_fit(&x, &y, 4).unwrap();
        for (a, b) in m.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn predictions_clamped_at_zero() {
        let m = OlsModel { weights: vec![-1.0, 1.0] };
        assert_eq!(ols_predict(&m, &[3.0, 1.0, 1.0, 3.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn underdetermined_uses_ridge() {
        let m = ols_fit(&[1.0, 1.0, 0.0], &[2.0], 3).unwrap();
        assert!((m.weights[0] + m.weights[1] - 2.0).abs() < 1e-5);
        assert!((m.weights[0] - m.weights[1]).abs() < 1e-9);
        assert_eq!(m.weights[2], 0.0);
    }
}
