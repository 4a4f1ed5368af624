//! Gaussian radial basis network: k-means centres, shared width, linear
//! output layer by least squares.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::linalg::{least_squares, median, sq_dist};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RbnnConfig {
    pub max_centers: usize,
    /// Centres are `n / samples_per_center`, capped at `max_centers`.
    pub samples_per_center: usize,
    pub kmeans_iterations: usize,
}

impl Default for RbnnConfig {
    fn default() -> Self {
        RbnnConfig { max_centers: 50, samples_per_center: 5, kmeans_iterations: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbnnModel {
    pub centers: Vec<Vec<f64>>,
    pub width: f64,
    pub bias: f64,
    pub weights: Vec<f64>,
}

pub fn kmeans(z: &[Vec<f64>], k: usize, iterations: usize, rng: &mut crate::Rng) -> Vec<Vec<f64>> {
    // k-means++ seeding
    let mut centers = vec![z[crate::index(rng, z.len())].clone()];
    let mut d2: Vec<f64> = z.iter().map(|r| sq_dist(r, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            crate::index(rng, z.len())
        } else {
            let mut u = rng.gen_range(0.0..total);
            let mut pick = z.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centers.push(z[next].clone());
        let c = centers.last().unwrap();
        for (d, r) in d2.iter_mut().zip(z) {
            *d = d.min(sq_dist(r, c));
        }
    }
    let p = z[0].len();
    for _ in 0..iterations {
        let mut sums = vec![vec![0.0; p]; k];
        let mut counts = vec![0usize; k];
        for r in z {
            let j = (0..k).min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b]))).unwrap();
            counts[j] += 1;
            sums[j].iter_mut().zip(r).for_each(|(s, v)| *s += v);
        }
        let mut moved = false;
        for j in 0..k {
            if counts[j] > 0 {
                let c: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                moved |= c != centers[j];
                centers[j] = c;
            }
        }
        if !moved {
            break;
        }
    }
    centers
}

impl RbnnModel {
    fn basis(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let denom = 2.0 * self.width * self.width;
        out.extend(self.centers.iter().map(|c| (-sq_dist(z, c) / denom).exp()));
    }

    pub fn fit(z: &[Vec<f64>], y: &[f64], cfg: &RbnnConfig, rng: &mut crate::Rng) -> Result<(Self, bool)> {
        let k = (z.len() / cfg.samples_per_center.max(1)).clamp(1, cfg.max_centers.max(1));
        let centers = kmeans(z, k, cfg.kmeans_iterations, rng);
        let mut d = Vec::new();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                d.push(sq_dist(&centers[i], &centers[j]).sqrt());
            }
        }
        let mut width = median(&mut d);
        if !(width > 0.0) {
            width = 1.0;
        }
        let mut model = RbnnModel { centers, width, bias: 0.0, weights: Vec::new() };
        let mut x = DMatrix::zeros(z.len(), k + 1);
        let mut buf = Vec::with_capacity(k);
        for (i, r) in z.iter().enumerate() {
            model.basis(r, &mut buf);
            x[(i, 0)] = 1.0;
            for (j, v) in buf.iter().enumerate() {
                x[(i, j + 1)] = *v;
            }
        }
        let (beta, ridged) = least_squares(&x, &DVector::from_column_slice(y))?;
        model.bias = beta[0];
        model.weights = beta.iter().skip(1).copied().collect();
        Ok((model, ridged))
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        let denom = 2.0 * self.width * self.width;
        self.bias + self.centers.iter().zip(&self.weights).map(|(c, w)| w * (-sq_dist(z, c) / denom).exp()).sum::<f64>()
    }
}
