//! Linear and quadratic least-squares models on standardized inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linalg::least_squares;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn fit(z: &[Vec<f64>], y: &[f64]) -> Result<(Self, bool)> {
        let p = z[0].len();
        let x = DMatrix::from_fn(z.len(), p + 1, |i, j| if j == 0 { 1.0 } else { z[i][j - 1] });
        let (beta, ridged) = least_squares(&x, &DVector::from_column_slice(y))?;
        Ok((LinearModel { intercept: beta[0], weights: beta.iter().skip(1).copied().collect() }, ridged))
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }
}

/// Full quadratic: linear terms, squares and pairwise products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticModel {
    pub intercept: f64,
    pub linear: Vec<f64>,
    /// Upper-triangular coefficients `(i, j)` with `i <= j`, row by row.
    pub quadratic: Vec<f64>,
}

pub fn quadratic_features(z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(z);
    for i in 0..z.len() {
        for j in i..z.len() {
            out.push(z[i] * z[j]);
        }
    }
}

impl QuadraticModel {
    pub fn fit(z: &[Vec<f64>], y: &[f64]) -> Result<(Self, bool)> {
        let p = z[0].len();
        let m = 1 + p + p * (p + 1) / 2;
        let mut x = DMatrix::zeros(z.len(), m);
        let mut buf = Vec::with_capacity(m);
        for (i, row) in z.iter().enumerate() {
            quadratic_features(row, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        let (beta, ridged) = least_squares(&x, &DVector::from_column_slice(y))?;
        let b: Vec<f64> = beta.iter().copied().collect();
        Ok((
            QuadraticModel { intercept: b[0], linear: b[1..=p].to_vec(), quadratic: b[p + 1..].to_vec() },
            ridged,
        ))
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        let mut f = self.intercept;
        let mut k = 0;
        for i in 0..z.len() {
            f += self.linear[i] * z[i];
            let mut acc = 0.0;
            for j in i..z.len() {
                acc += self.quadratic[k] * z[j];
                k += 1;
            }
            f += z[i] * acc;
        }
        f
    }
}
