//! Closed-form ridge regression on centered data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::features::FEATURE_LAYOUT_VERSION;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RidgeError {
    #[error("length mismatch: {0} rows vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("regularization must be finite and ≥ 0, got {0}")]
    InvalidLambda(f64),
    #[error("normal system is singular")]
    SingularSystem,
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub layout_version: u32,
}

/// Solves `(XᵀX + λI) w = Xᵀy` on centered columns.
///
/// The system is never formed: `w` is the least-squares solution of the
/// stacked problem `[X; √λ·I] w ≈ [y; 0]`, solved through a QR
/// factorization.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<RidgeModel, RidgeError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(RidgeError::InvalidLambda(lambda));
    }
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(RidgeError::LengthMismatch(n, y.len()));
    }
    if n == 0 {
        return Err(RidgeError::EmptyInput);
    }
    let x_mean: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    if p == 0 {
        return Ok(RidgeModel {
            weights: Vec::new(),
            intercept: y_mean,
            lambda,
            layout_version: FEATURE_LAYOUT_VERSION,
        });
    }

    let sl = lambda.sqrt();
    let a = DMatrix::from_fn(n + p, p, |i, j| {
        if i < n {
            x.get(i, j) - x_mean[j]
        } else if i - n == j {
            sl
        } else {
            0.0
        }
    });
    let b = DVector::from_fn(n + p, |i, _| if i < n { y[i] - y_mean } else { 0.0 });

    let qr = a.qr();
    let r = qr.r();
    let scale = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let tol = scale * (n + p) as f64 * f64::EPSILON;
    if scale == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= tol) {
        return Err(RidgeError::SingularSystem);
    }
    let qtb = qr.q().transpose() * b;
    let w = r
        .solve_upper_triangular(&qtb)
        .ok_or(RidgeError::SingularSystem)?;
    let weights: Vec<f64> = w.iter().copied().collect();
    let intercept = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        lambda,
        layout_version: FEATURE_LAYOUT_VERSION,
    })
}

impl RidgeModel {
    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, RidgeError> {
        if x.len() != self.weights.len() {
            return Err(RidgeError::DimensionMismatch {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }
}

pub fn predict_ridge(model: &RidgeModel, x: &[f64]) -> Result<f64, RidgeError> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_instance(seed: u64, n: usize, p: usize) -> (Matrix, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let y = rows
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| (j as f64 - 1.5) * v).sum::<f64>() + rng.random_range(-0.3..0.3) + 4.0)
            .collect();
        (Matrix::from_rows(&rows), y)
    }

    /// Gaussian elimination with partial pivoting on the formed normal
    /// equations.
    fn direct_solve(x: &Matrix, y: &[f64], lambda: f64) -> Vec<f64> {
        let (n, p) = (x.rows(), x.cols());
        let xm: Vec<f64> = (0..p).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
        let ym = y.iter().sum::<f64>() / n as f64;
        let mut a = vec![vec![0.0; p + 1]; p];
        for (r, row) in a.iter_mut().enumerate() {
            for c in 0..p {
                row[c] = (0..n).map(|i| (x.get(i, r) - xm[r]) * (x.get(i, c) - xm[c])).sum::<f64>();
            }
            row[r] += lambda;
            row[p] = (0..n).map(|i| (x.get(i, r) - xm[r]) * (y[i] - ym)).sum::<f64>();
        }
        for k in 0..p {
            let piv = (k..p).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, piv);
            for i in k + 1..p {
                let f = a[i][k] / a[k][k];
                for c in k..=p {
                    a[i][c] -= f * a[k][c];
                }
            }
        }
        let mut w = vec![0.0; p];
        for k in (0..p).rev() {
            let s: f64 = (k + 1..p).map(|c| a[k][c] * w[c]).sum();
            w[k] = (a[k][p] - s) / a[k][k];
        }
        w
    }

    #[test]
    fn constant_response() {
        let (x, _) = random_instance(1, 30, 3);
        let m = fit_ridge(&x, &[7.5; 30], 1.0).unwrap();
        assert!(m.weights.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-9);
        assert!((m.intercept - 7.5).abs() < 1e-12);
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let (x, y) = random_instance(2, 40, 4);
        let m = fit_ridge(&x, &y, 1e9).unwrap();
        assert!(m.weights.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn matches_direct_solve() {
        let (x, y) = random_instance(3, 60, 5);
        let m = fit_ridge(&x, &y, 0.1).unwrap();
        let w = direct_solve(&x, &y, 0.1);
        for (a, b) in m.weights.iter().zip(&w) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn residuals_orthogonal_without_regularization() {
        let (x, y) = random_instance(4, 50, 4);
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        for j in 0..4 {
            let dot: f64 = (0..50)
                .map(|i| x.get(i, j) * (y[i] - m.predict(x.row(i)).unwrap()))
                .sum();
            assert!(dot.abs() < 1e-8, "column {j}: {dot}");
        }
    }

    #[test]
    fn translation_equivariance() {
        let (x, y) = random_instance(5, 50, 3);
        let shifted = Matrix::from_rows(
            &x.iter_rows()
                .map(|r| vec![r[0] + 10.0, r[1], r[2]])
                .collect::<Vec<_>>(),
        );
        let a = fit_ridge(&x, &y, 0.5).unwrap();
        let b = fit_ridge(&shifted, &y, 0.5).unwrap();
        for r in x.iter_rows() {
            let pa = a.predict(r).unwrap();
            let pb = b.predict(&[r[0] + 10.0, r[1], r[2]]).unwrap();
            assert!((pa - pb).abs() < 1e-8);
        }
    }

    #[test]
    fn rank_deficient_is_singular_at_zero_lambda() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [5.0, 10.0]]);
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(fit_ridge(&x, &y, 0.0), Err(RidgeError::SingularSystem));
        assert!(fit_ridge(&x, &y, 0.1).is_ok());
    }

    #[test]
    fn predict_contract() {
        let m = RidgeModel {
            weights: vec![0.0, 0.0],
            intercept: 3.0,
            lambda: 1.0,
            layout_version: 1,
        };
        assert_eq!(m.predict(&[5.0, -1.0]).unwrap(), 3.0);
        let (x, y) = random_instance(6, 30, 3);
        let m = fit_ridge(&x, &y, 1.0).unwrap();
        assert_eq!(m.predict(&[0.0; 3]).unwrap(), m.intercept);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let manual = m.intercept + m.weights[0] * p[0] + m.weights[1] * p[1] + m.weights[2] * p[2];
            assert!((predict_ridge(&m, &p).unwrap() - manual).abs() < 1e-12);
        }
        assert!(matches!(m.predict(&[1.0]), Err(RidgeError::DimensionMismatch { .. })));
    }
}
