use serde::{Deserialize, Serialize};

use super::DenseMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// `max_k |λ̂_k - λ_k|`, present when exact eigenvalues were supplied.
    pub max_eval_err: Option<f64>,
    /// `‖XᵀX - I‖_F`.
    pub orth_err: f64,
    /// `max_i ‖A x_i - λ_i x_i‖₂`.
    pub max_residual: f64,
}

/// Accuracy of eigenpairs `(lambda[i], column i of x)` of `a`.
pub fn accuracy(
    a: &DenseMatrix,
    lambda: &[f64],
    x: &DenseMatrix,
    exact: Option<&[f64]>,
) -> Result<AccuracyReport> {
    let n = a.order();
    if x.order() != n || lambda.len() != n || exact.is_some_and(|e| e.len() != n) {
        return Err(Error::Dimension(format!(
            "accuracy of order {n} needs {n} eigenvalues and an {n}x{n} eigenvector matrix"
        )));
    }
    let cols = x.columns();

    let mut orth = 0.0;
    for i in 0..n {
        for j in i..n {
            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(p, q)| p * q).sum();
            let dev = if i == j { dot - 1.0 } else { dot };
            orth += if i == j { dev * dev } else { 2.0 * dev * dev };
        }
    }

    let max_residual = cols
        .iter()
        .zip(lambda)
        .map(|(c, &l)| {
            a.matvec(c)
                .iter()
                .zip(c)
                .map(|(ax, xi)| (ax - l * xi).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);

    let max_eval_err = exact.map(|e| {
        e.iter()
            .zip(lambda)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    });

    Ok(AccuracyReport {
        max_eval_err,
        orth_err: orth.sqrt(),
        max_residual,
    })
}
