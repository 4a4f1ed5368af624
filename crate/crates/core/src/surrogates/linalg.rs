use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const RIDGE: f64 = 1e-8;

/// Least squares through the normal equations. Falls back to a small ridge
/// when the Gram matrix is not positive definite; the flag reports that.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(y);
    if let Some(ch) = gram.clone().cholesky() {
        let beta = ch.solve(&rhs);
        if beta.iter().all(|v| v.is_finite()) {
            return Ok((beta, false));
        }
    }
    let n = gram.nrows();
    let ridged = gram + DMatrix::identity(n, n) * RIDGE;
    match ridged.cholesky() {
        Some(ch) => Ok((ch.solve(&rhs), true)),
        None => Err(Error::Numerical("normal equations singular even with ridge".into())),
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) }
}

/// Median pairwise Euclidean distance, computed on at most `cap` leading rows.
pub fn median_distance(rows: &[Vec<f64>], cap: usize) -> f64 {
    let rows = &rows[..rows.len().min(cap)];
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(sq_dist(&rows[i], &rows[j]).sqrt());
        }
    }
    median(&mut d)
}
