//! Zero-mean Gaussian process with a squared-exponential kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::linalg::{median_distance, sq_dist};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub iterations: usize,
    /// Fixed noise variance; optimized when absent.
    pub noise: Option<f64>,
    /// One length-scale per input instead of a shared one.
    pub ard: bool,
    /// Training rows beyond this are subsampled (seeded).
    pub max_points: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { iterations: 50, noise: None, ard: false, max_points: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    pub jitter: f64,
    pub train: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub log_likelihood: f64,
    /// Best negative log likelihood after each simplex iteration.
    pub history: Vec<f64>,
}

const JITTERS: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

fn scaled_sq_dist(a: &[f64], b: &[f64], ell: &[f64]) -> f64 {
    if ell.len() == 1 {
        sq_dist(a, b) / (ell[0] * ell[0])
    } else {
        a.iter().zip(b).zip(ell).map(|((x, y), l)| ((x - y) / l).powi(2)).sum()
    }
}

fn kernel_matrix(z: &[Vec<f64>], ell: &[f64], sf2: f64, sn2: f64) -> DMatrix<f64> {
    let n = z.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2 + sn2;
        for j in 0..i {
            let v = sf2 * (-0.5 * scaled_sq_dist(&z[i], &z[j], ell)).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky with escalating diagonal jitter.
fn factor(k: DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    for jitter in JITTERS {
        let m = if jitter == 0.0 { k.clone() } else { &k + DMatrix::identity(n, n) * jitter };
        if let Some(ch) = m.cholesky() {
            return Some((ch, jitter));
        }
    }
    None
}

struct Hyper {
    ell: Vec<f64>,
    sf2: f64,
    sn2: f64,
}

fn unpack(theta: &[f64], n_ell: usize, noise: Option<f64>) -> Hyper {
    Hyper {
        ell: theta[..n_ell].iter().map(|v| v.exp()).collect(),
        sf2: (2.0 * theta[n_ell]).exp(),
        sn2: noise.unwrap_or_else(|| (2.0 * theta[n_ell + 1]).exp()),
    }
}

fn neg_log_likelihood(z: &[Vec<f64>], y: &DVector<f64>, h: &Hyper) -> f64 {
    let Some((ch, _)) = factor(kernel_matrix(z, &h.ell, h.sf2, h.sn2)) else {
        return f64::INFINITY;
    };
    let alpha = ch.solve(y);
    let log_det: f64 = ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let v = 0.5 * y.dot(&alpha) + log_det + 0.5 * y.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    if v.is_finite() { v } else { f64::INFINITY }
}

/// Nelder-Mead on `f` from `x0`; returns the best point and the best value
/// after each iteration.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, iterations: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f(x0))];
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut history = Vec::with_capacity(iterations);
    let at = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> { c.iter().zip(w).map(|(a, b)| a + t * (b - a)).collect() };
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let worst = simplex[d].clone();
        let centroid: Vec<f64> =
            (0..d).map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64).collect();
        let xr = at(&centroid, &worst.0, -1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = at(&centroid, &worst.0, -2.0);
            let fe = f(&xe);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let x = at(&centroid, &worst.0, -0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = at(&centroid, &worst.0, 0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < worst.1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x = at(&best, &s.0, 0.5);
                    let v = f(&x);
                    *s = (x, v);
                }
            }
        }
        let best = simplex.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        history.push(best);
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0.clone(), simplex[0].1, history)
}

impl GpModel {
    pub fn fit(z: &[Vec<f64>], y: &[f64], cfg: &GpConfig, rng: &mut crate::Rng) -> Result<Self> {
        let (z, y): (Vec<Vec<f64>>, Vec<f64>) = if z.len() > cfg.max_points {
            let mut idx = sample(rng, z.len(), cfg.max_points).into_vec();
            idx.sort_unstable();
            (idx.iter().map(|&i| z[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
        } else {
            (z.to_vec(), y.to_vec())
        };
        let p = z[0].len();
        let yv = DVector::from_column_slice(&y);
        let n_ell = if cfg.ard { p } else { 1 };
        let mut start_ell = median_distance(&z, 500);
        if !(start_ell > 0.0) {
            start_ell = 1.0;
        }
        let mut theta0 = vec![start_ell.ln(); n_ell];
        theta0.push(0.0);
        if cfg.noise.is_none() {
            theta0.push(0.1f64.ln());
        }
        let objective = |t: &[f64]| {
            if t.iter().any(|v| !(-15.0..=15.0).contains(v)) {
                return f64::INFINITY;
            }
            neg_log_likelihood(&z, &yv, &unpack(t, n_ell, cfg.noise))
        };
        let (theta, best, history) = nelder_mead(objective, &theta0, 0.5, cfg.iterations);
        let h = unpack(&theta, n_ell, cfg.noise);
        let (ch, jitter) = factor(kernel_matrix(&z, &h.ell, h.sf2, h.sn2))
            .ok_or_else(|| Error::Numerical("kernel matrix not positive definite after jitter 1e-4".into()))?;
        let alpha = ch.solve(&yv);
        Ok(GpModel {
            length_scales: h.ell,
            signal_var: h.sf2,
            noise_var: h.sn2,
            jitter,
            train: z,
            alpha: alpha.iter().copied().collect(),
            log_likelihood: -best,
            history,
        })
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        self.train
            .iter()
            .zip(&self.alpha)
            .map(|(t, a)| a * self.signal_var * (-0.5 * scaled_sq_dist(z, t, &self.length_scales)).exp())
            .sum()
    }

    /// Latent predictive variance; refactors the kernel matrix on each call.
    pub fn variance(&self, z: &[f64]) -> Result<f64> {
        let k = kernel_matrix(&self.train, &self.length_scales, self.signal_var, self.noise_var);
        let n = k.nrows();
        let ch = (k + DMatrix::identity(n, n) * self.jitter)
            .cholesky()
            .ok_or_else(|| Error::Numerical("kernel refactorization failed".into()))?;
        let ks = DVector::from_iterator(
            n,
            self.train.iter().map(|t| self.signal_var * (-0.5 * scaled_sq_dist(z, t, &self.length_scales)).exp()),
        );
        let v = ch.solve(&ks);
        Ok((self.signal_var - ks.dot(&v)).max(0.0))
    }
}
