//! Single hidden layer of sigmoid units with a linear output, trained by
//! full-batch gradient descent with momentum.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub holdout: f64,
    /// Epochs without holdout improvement before stopping.
    pub patience: usize,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig { hidden: 16, epochs: 2000, learning_rate: 0.05, momentum: 0.9, holdout: 0.1, patience: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub inputs: usize,
    pub hidden: usize,
    /// Flat parameters: hidden weights (row per unit), hidden biases,
    /// output weights, output bias.
    pub params: Vec<f64>,
    pub epochs_run: usize,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

impl NnModel {
    pub fn n_params(inputs: usize, hidden: usize) -> usize {
        hidden * inputs + 2 * hidden + 1
    }

    pub fn forward(params: &[f64], inputs: usize, hidden: usize, z: &[f64]) -> f64 {
        let (w1, rest) = params.split_at(hidden * inputs);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden);
        let mut out = b2[0];
        for h in 0..hidden {
            let a: f64 = b1[h] + w1[h * inputs..(h + 1) * inputs].iter().zip(z).map(|(w, x)| w * x).sum::<f64>();
            out += w2[h] * sigmoid(a);
        }
        out
    }

    /// Mean of `0.5 * (prediction - target)^2` and its gradient.
    pub fn loss_and_grad(params: &[f64], inputs: usize, hidden: usize, z: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; params.len()];
        let (w1, rest) = params.split_at(hidden * inputs);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden);
        let off_b1 = hidden * inputs;
        let off_w2 = off_b1 + hidden;
        let off_b2 = off_w2 + hidden;
        let mut act = vec![0.0; hidden];
        let mut loss = 0.0;
        let n = z.len() as f64;
        for (row, &t) in z.iter().zip(y) {
            let mut out = b2[0];
            for h in 0..hidden {
                let a: f64 = b1[h] + w1[h * inputs..(h + 1) * inputs].iter().zip(row).map(|(w, x)| w * x).sum::<f64>();
                act[h] = sigmoid(a);
                out += w2[h] * act[h];
            }
            let e = out - t;
            loss += 0.5 * e * e / n;
            let e = e / n;
            grad[off_b2] += e;
            for h in 0..hidden {
                grad[off_w2 + h] += e * act[h];
                let d = e * w2[h] * act[h] * (1.0 - act[h]);
                grad[off_b1 + h] += d;
                for (g, x) in grad[h * inputs..(h + 1) * inputs].iter_mut().zip(row) {
                    *g += d * x;
                }
            }
        }
        (loss, grad)
    }

    pub fn fit(z: &[Vec<f64>], y: &[f64], cfg: &NnConfig, rng: &mut crate::Rng) -> Self {
        let p = z[0].len();
        let h = cfg.hidden.max(1);
        let scale = (1.0 / p.max(1) as f64).sqrt();
        let mut params: Vec<f64> = (0..Self::n_params(p, h)).map(|_| rng.gen_range(-scale..scale)).collect();
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.shuffle(rng);
        let n_hold = if z.len() >= 10 { ((z.len() as f64 * cfg.holdout).round() as usize).max(1) } else { 0 };
        let (hold, train) = order.split_at(n_hold);
        let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<f64>) {
            (idx.iter().map(|&i| z[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
        };
        let (zt, yt) = pick(train);
        let (zh, yh) = pick(hold);
        let mut velocity = vec![0.0; params.len()];
        let mut best = params.clone();
        let mut best_val = f64::INFINITY;
        let mut since_best = 0;
        let mut epochs_run = 0;
        for _ in 0..cfg.epochs {
            let (_, grad) = Self::loss_and_grad(&params, p, h, &zt, &yt);
            for ((w, v), g) in params.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v - cfg.learning_rate * g;
                *w += *v;
            }
            epochs_run += 1;
            if n_hold > 0 {
                let (val, _) = Self::loss_and_grad(&params, p, h, &zh, &yh);
                if val < best_val {
                    best_val = val;
                    best.copy_from_slice(&params);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if since_best >= cfg.patience {
                        break;
                    }
                }
            }
        }
        if n_hold == 0 {
            best = params;
        }
        NnModel { inputs: p, hidden: h, params: best, epochs_run }
    }

    pub fn predict(&self, z: &[f64]) -> f64 {
        Self::forward(&self.params, self.inputs, self.hidden, z)
    }
}
